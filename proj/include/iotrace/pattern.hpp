#pragma once

// Offset pattern recognition.
//
// Within a process, successive calls that differ only in an offset argument
// are checked against index * a + b. At finalization the per-rank encodings
// are compared across ranks and coefficients that follow rank * c + d are
// rewritten so that the signatures become identical on every rank.
//
// Index rule: the index of a call is the number of earlier calls on the same
// rank sharing its masked key (signature with offsets masked). Encoder and
// decoder both count this way, so the index never needs to be stored.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "iotrace/error.hpp"
#include "iotrace/model.hpp"
#include "iotrace/signature_table.hpp"

namespace iotrace {

/// Per-rank intra-process pattern state, keyed by masked key (plus slot).
class PatternTracker {
 public:
  OffsetPattern encode(const std::string& key, std::int64_t offset) {
    std::lock_guard lock(mu_);
    auto& s = states_[key];
    const std::uint64_t i = s.count++;
    if (s.anchored && !s.stride) {
      // The anchor is always the previous call here; the first difference
      // fixes the hypothesis, rebased so that index * a + b holds for the
      // global index.
      __int128 a = static_cast<__int128>(offset) - s.anchor_offset;
      __int128 b = static_cast<__int128>(s.anchor_offset) - a * static_cast<__int128>(s.anchor_index);
      if (fits(a) && fits(b)) {
        s.stride = static_cast<std::int64_t>(a);
        if (a == 0) {
          s.start = s.anchor_offset;
          return OffsetPattern::literal(offset);
        }
        s.start = static_cast<std::int64_t>(b);
        return OffsetPattern::iter_linear(*s.stride, s.start);
      }
    } else if (s.anchored) {
      __int128 expected = static_cast<__int128>(i) * *s.stride + s.start;
      if (expected == offset) {
        if (*s.stride == 0) return OffsetPattern::literal(offset);
        return OffsetPattern::iter_linear(*s.stride, s.start);
      }
    }
    // First call for this key, or the hypothesis broke: start over here.
    s.anchored = true;
    s.anchor_index = i;
    s.anchor_offset = offset;
    s.stride.reset();
    return OffsetPattern::literal(offset);
  }

 private:
  struct State {
    std::uint64_t count = 0;
    bool anchored = false;
    std::uint64_t anchor_index = 0;
    std::int64_t anchor_offset = 0;
    std::optional<std::int64_t> stride;
    std::int64_t start = 0;
  };

  static bool fits(__int128 v) { return v >= INT64_MIN && v <= INT64_MAX; }

  std::mutex mu_;
  std::unordered_map<std::string, State> states_;
};

/// Finds (c, d) with values[r] == r * c + d for every rank, c != 0.
inline std::optional<RankAffine> recognize_rank_linear(std::span<const std::int64_t> values) {
  if (values.size() < 2) return std::nullopt;
  __int128 c = static_cast<__int128>(values[1]) - values[0];
  if (c == 0 || c < INT64_MIN || c > INT64_MAX) return std::nullopt;
  for (std::size_t r = 2; r < values.size(); ++r) {
    if (static_cast<__int128>(values[0]) + c * static_cast<__int128>(r) != values[r]) return std::nullopt;
  }
  return RankAffine{static_cast<std::int64_t>(c), values[0]};
}

namespace detail {

/// Masked key plus the Literal/IterLinear shape of every offset argument.
inline std::string pattern_group_key(const SignatureFields& f) {
  std::string key = masked_key(f);
  key.push_back('|');
  for (const auto& arg : f.args) {
    if (const auto* p = std::get_if<OffsetPattern>(&arg)) {
      key.push_back(static_cast<char>(p->kind));
    }
  }
  return key;
}

inline bool has_offset_args(const SignatureFields& f) {
  for (const auto& arg : f.args) {
    if (std::holds_alternative<OffsetPattern>(arg)) return true;
  }
  return false;
}

}  // namespace detail

/// Inter-process rewrite. For every group of entries that share masked key
/// and pattern shape, where each rank contributes exactly one entry, each
/// offset coefficient that is rank-linear across ranks is replaced by its
/// rank * c + d form. Entries that do not qualify are left untouched.
/// Terminal indices never change.
inline std::vector<SignatureTable> finalize_patterns(std::vector<SignatureTable> tables) {
  const std::size_t ranks = tables.size();
  if (ranks < 2) return tables;

  struct Candidate {
    std::uint32_t index;
    SignatureFields fields;
  };
  std::vector<std::map<std::string, std::vector<Candidate>>> groups(ranks);
  for (std::size_t r = 0; r < ranks; ++r) {
    auto entries = tables[r].entries();
    for (std::uint32_t idx = 0; idx < entries.size(); ++idx) {
      auto fields = decode_signature(entries[idx].signature.bytes);
      if (!detail::has_offset_args(fields)) continue;
      bool already_rank = false;
      for (const auto& arg : fields.args) {
        if (const auto* p = std::get_if<OffsetPattern>(&arg); p && p->has_rank_terms()) already_rank = true;
      }
      if (already_rank) continue;
      groups[r][detail::pattern_group_key(fields)].push_back({idx, std::move(fields)});
    }
  }

  std::vector<std::int64_t> values(ranks);
  for (auto& [key, first] : groups[0]) {
    if (first.size() != 1) continue;
    std::vector<Candidate*> members{&first.front()};
    for (std::size_t r = 1; r < ranks; ++r) {
      auto it = groups[r].find(key);
      if (it == groups[r].end() || it->second.size() != 1) break;
      members.push_back(&it->second.front());
    }
    if (members.size() != ranks) continue;

    bool changed = false;
    const auto& proto = members.front()->fields.args;
    for (std::size_t slot = 0; slot < proto.size(); ++slot) {
      const auto* p0 = std::get_if<OffsetPattern>(&proto[slot]);
      if (!p0) continue;
      auto rewrite = [&](RankAffine OffsetPattern::*coef) {
        for (std::size_t r = 0; r < ranks; ++r) {
          values[r] = (std::get<OffsetPattern>(members[r]->fields.args[slot]).*coef).base;
        }
        if (auto fit = recognize_rank_linear(values)) {
          for (auto* m : members) std::get<OffsetPattern>(m->fields.args[slot]).*coef = *fit;
          changed = true;
        }
      };
      rewrite(&OffsetPattern::start);
      if (p0->kind == OffsetPattern::Kind::IterLinear) rewrite(&OffsetPattern::stride);
    }
    if (!changed) continue;
    for (std::size_t r = 0; r < ranks; ++r) {
      tables[r].replace_signature(members[r]->index, make_signature(members[r]->fields));
    }
  }
  return tables;
}

/// Replays the index rule on a rank's decoded stream, turning offset
/// patterns back into concrete offsets.
class OffsetDecoder {
 public:
  explicit OffsetDecoder(std::uint32_t rank) : rank_(rank) {}

  /// `key_id` identifies the masked key of the call (callers intern keys).
  void decode(std::vector<ArgValue>& args, std::size_t key_id) {
    if (key_id >= counts_.size()) counts_.resize(key_id + 1, 0);
    const std::uint64_t index = counts_[key_id]++;
    for (auto& arg : args) {
      if (const auto* p = std::get_if<OffsetPattern>(&arg)) arg = p->decode(rank_, index);
    }
  }

 private:
  std::uint32_t rank_;
  std::vector<std::uint64_t> counts_;
};

/// Issues group-wide ids for collectively opened handles and remembers each
/// rank's local handle mapping.
class HandleRegistry {
 public:
  struct Participant {
    std::uint32_t rank;
    LocalHandle handle;
  };

  UniqueHandle collective_open(std::span<const Participant> group) {
    std::lock_guard lock(mu_);
    if (group.empty()) throw Error(Errc::InvalidArgument, "collective open with empty group");
    std::map<std::uint32_t, bool> seen;
    for (const auto& p : group) {
      if (!seen.emplace(p.rank, true).second || map_.contains({p.rank, p.handle.value})) {
        throw Error(Errc::DoubleOpen, "rank " + std::to_string(p.rank) + " handle " +
                                          std::to_string(p.handle.value) + " already mapped");
      }
    }
    UniqueHandle id{next_id_++};
    for (const auto& p : group) map_.emplace(std::pair{p.rank, p.handle.value}, id.value);
    return id;
  }

  std::optional<UniqueHandle> lookup(std::uint32_t rank, LocalHandle handle) const {
    std::lock_guard lock(mu_);
    auto it = map_.find({rank, handle.value});
    if (it == map_.end()) return std::nullopt;
    return UniqueHandle{it->second};
  }

  std::uint32_t issued() const {
    std::lock_guard lock(mu_);
    return next_id_;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> map_;
  std::uint32_t next_id_ = 0;
};

}  // namespace iotrace
