#pragma once

// Core value types: intercepted call records, argument values, offset
// patterns, the function registry and the canonical call-signature codec.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "iotrace/bytes.hpp"
#include "iotrace/error.hpp"

namespace iotrace {

struct FunctionId {
  std::uint16_t value = 0;
  friend bool operator==(FunctionId, FunctionId) = default;
  friend auto operator<=>(FunctionId, FunctionId) = default;
};

struct FunctionInfo {
  std::string name;
  std::uint32_t arity = 0;
  std::vector<std::uint32_t> offset_slots;  // sorted, unique
  std::string layer = "posix";
  std::optional<std::uint32_t> path_slot;  // argument consulted by prefix filtering

  bool is_offset_slot(std::uint32_t slot) const {
    return std::binary_search(offset_slots.begin(), offset_slots.end(), slot);
  }
  friend bool operator==(const FunctionInfo&, const FunctionInfo&) = default;
};

/// Optional properties of a registered function that do not take part in
/// conflict detection.
struct FunctionTraits {
  std::string layer = "posix";
  std::optional<std::uint32_t> path_slot;
};

/// Name <-> id bijection. Ids are dense from 0 in first-registration order.
/// Safe for concurrent registration and lookup.
class FunctionRegistry {
 public:
  FunctionRegistry() = default;
  FunctionRegistry(const FunctionRegistry& other) {
    auto copy = other.snapshot();
    infos_.assign(copy.begin(), copy.end());
    reindex();
  }
  FunctionRegistry& operator=(const FunctionRegistry& other) {
    if (this != &other) {
      auto copy = other.snapshot();
      std::unique_lock lock(mu_);
      infos_.assign(copy.begin(), copy.end());
      reindex();
    }
    return *this;
  }

  /// Build from a previously captured snapshot (e.g. archive metadata).
  explicit FunctionRegistry(std::vector<FunctionInfo> infos) : infos_(infos.begin(), infos.end()) {
    reindex();
  }

  FunctionId register_function(std::string_view name, std::uint32_t arity,
                               std::vector<std::uint32_t> offset_slots,
                               FunctionTraits traits = {}) {
    if (name.empty()) throw Error(Errc::InvalidArgument, "function name must be non-empty");
    std::sort(offset_slots.begin(), offset_slots.end());
    offset_slots.erase(std::unique(offset_slots.begin(), offset_slots.end()), offset_slots.end());
    for (auto slot : offset_slots) {
      if (slot >= arity) {
        throw Error(Errc::InvalidArgument,
                    "offset slot " + std::to_string(slot) + " out of range for " + std::string(name));
      }
    }
    std::unique_lock lock(mu_);
    if (auto it = by_name_.find(std::string(name)); it != by_name_.end()) {
      const auto& existing = infos_[it->second];
      if (existing.arity != arity || existing.offset_slots != offset_slots) {
        throw Error(Errc::ConflictingRegistration,
                    "'" + std::string(name) + "' already registered with a different shape");
      }
      return FunctionId{it->second};
    }
    if (infos_.size() > 0xFFFF) throw Error(Errc::InvalidArgument, "function registry full");
    auto id = static_cast<std::uint16_t>(infos_.size());
    infos_.push_back(FunctionInfo{std::string(name), arity, std::move(offset_slots),
                                  std::move(traits.layer), traits.path_slot});
    by_name_.emplace(infos_.back().name, id);
    return FunctionId{id};
  }

  std::optional<FunctionId> find(std::string_view name) const {
    std::shared_lock lock(mu_);
    auto it = by_name_.find(std::string(name));
    if (it == by_name_.end()) return std::nullopt;
    return FunctionId{it->second};
  }

  /// Entries are never removed, so the reference stays valid.
  const FunctionInfo& info(FunctionId id) const {
    std::shared_lock lock(mu_);
    if (id.value >= infos_.size()) {
      throw Error(Errc::UnknownFunction, "function id " + std::to_string(id.value));
    }
    return infos_[id.value];
  }

  bool contains(FunctionId id) const {
    std::shared_lock lock(mu_);
    return id.value < infos_.size();
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return infos_.size();
  }

  std::vector<FunctionInfo> snapshot() const {
    std::shared_lock lock(mu_);
    return {infos_.begin(), infos_.end()};
  }

 private:
  void reindex() {
    by_name_.clear();
    for (std::size_t i = 0; i < infos_.size(); ++i) {
      if (!by_name_.emplace(infos_[i].name, static_cast<std::uint16_t>(i)).second) {
        throw Error(Errc::ConflictingRegistration, "duplicate function name " + infos_[i].name);
      }
    }
  }

  mutable std::shared_mutex mu_;
  std::deque<FunctionInfo> infos_;
  std::unordered_map<std::string, std::uint16_t> by_name_;
};

namespace detail {
inline std::int64_t checked_narrow(__int128 v) {
  if (v > INT64_MAX || v < INT64_MIN) throw Error(Errc::InvalidRecord, "offset arithmetic overflow");
  return static_cast<std::int64_t>(v);
}
}  // namespace detail

/// rank * per_rank + base. per_rank == 0 is a plain constant.
struct RankAffine {
  std::int64_t per_rank = 0;
  std::int64_t base = 0;

  static RankAffine constant(std::int64_t v) { return {0, v}; }
  bool is_rank_linear() const noexcept { return per_rank != 0; }
  __int128 at(std::uint32_t rank) const noexcept {
    return static_cast<__int128>(rank) * per_rank + base;
  }
  friend bool operator==(const RankAffine&, const RankAffine&) = default;
};

/// Encoded offset argument. A Literal holds its value in `start`; an
/// IterLinear pattern yields `index * stride + start` for the index-th call
/// sharing the pattern key. Either coefficient may be rank-dependent after
/// finalization.
struct OffsetPattern {
  enum class Kind : std::uint8_t { Literal = 0, IterLinear = 1 };

  Kind kind = Kind::Literal;
  RankAffine stride;
  RankAffine start;

  static OffsetPattern literal(std::int64_t v) { return {Kind::Literal, {}, RankAffine::constant(v)}; }
  static OffsetPattern iter_linear(std::int64_t a, std::int64_t b) {
    return {Kind::IterLinear, RankAffine::constant(a), RankAffine::constant(b)};
  }

  bool has_rank_terms() const noexcept {
    return start.is_rank_linear() || (kind == Kind::IterLinear && stride.is_rank_linear());
  }

  std::int64_t decode(std::uint32_t rank, std::uint64_t index) const {
    if (kind == Kind::Literal) return detail::checked_narrow(start.at(rank));
    return detail::checked_narrow(static_cast<__int128>(index) * stride.at(rank) + start.at(rank));
  }

  friend bool operator==(const OffsetPattern&, const OffsetPattern&) = default;
};

struct LocalHandle {
  std::uint32_t value = 0;
  friend bool operator==(LocalHandle, LocalHandle) = default;
};

/// Group-wide id substituted for a collectively opened local handle.
struct UniqueHandle {
  std::uint32_t value = 0;
  friend bool operator==(UniqueHandle, UniqueHandle) = default;
};

using ArgValue = std::variant<std::int64_t, std::string, LocalHandle, UniqueHandle, OffsetPattern>;

/// Everything a signature encodes: a record minus its timestamps.
struct SignatureFields {
  FunctionId func;
  std::vector<ArgValue> args;
  std::uint32_t thread_id = 0;
  std::uint8_t call_depth = 0;
  friend bool operator==(const SignatureFields&, const SignatureFields&) = default;
};

struct CallRecord {
  FunctionId func;
  std::vector<ArgValue> args;
  std::uint32_t thread_id = 0;
  std::uint8_t call_depth = 0;
  std::uint32_t t_entry = 0;
  std::uint32_t t_exit = 0;

  SignatureFields fields() const { return {func, args, thread_id, call_depth}; }
  friend bool operator==(const CallRecord&, const CallRecord&) = default;
};

/// Entry and exit ticks of one recorded call, relative to the trace start.
struct TimestampPair {
  std::uint32_t entry = 0;
  std::uint32_t exit = 0;
  friend bool operator==(const TimestampPair&, const TimestampPair&) = default;
};

struct CallSignature {
  std::string bytes;
  friend bool operator==(const CallSignature&, const CallSignature&) = default;
  friend auto operator<=>(const CallSignature&, const CallSignature&) = default;
};

struct CallSignatureHash {
  std::size_t operator()(const CallSignature& s) const noexcept {
    return std::hash<std::string>{}(s.bytes);
  }
};

namespace wire {
// Argument tags inside a signature.
inline constexpr std::uint8_t kInt = 0;
inline constexpr std::uint8_t kStr = 1;
inline constexpr std::uint8_t kHandle = 2;
inline constexpr std::uint8_t kUniqueHandle = 3;
inline constexpr std::uint8_t kOffset = 4;
inline constexpr std::uint8_t kMasked = 0xFF;  // pattern keys only

// Offset pattern tags.
inline constexpr std::uint8_t kLiteral = 0;
inline constexpr std::uint8_t kIterLinear = 1;
inline constexpr std::uint8_t kRankLiteral = 2;
inline constexpr std::uint8_t kRankIterLinear = 3;
inline constexpr std::uint8_t kStrideRankFlag = 1;
inline constexpr std::uint8_t kStartRankFlag = 2;
}  // namespace wire

inline void encode_offset_pattern(ByteWriter& w, const OffsetPattern& p) {
  auto put_affine = [&](const RankAffine& c, bool rank) {
    if (rank) w.put(c.per_rank);
    w.put(c.base);
  };
  if (p.kind == OffsetPattern::Kind::Literal) {
    if (p.start.is_rank_linear()) {
      w.put(wire::kRankLiteral);
      put_affine(p.start, true);
    } else {
      w.put(wire::kLiteral);
      w.put(p.start.base);
    }
    return;
  }
  if (!p.has_rank_terms()) {
    w.put(wire::kIterLinear);
    w.put(p.stride.base);
    w.put(p.start.base);
    return;
  }
  std::uint8_t flags = 0;
  if (p.stride.is_rank_linear()) flags |= wire::kStrideRankFlag;
  if (p.start.is_rank_linear()) flags |= wire::kStartRankFlag;
  w.put(wire::kRankIterLinear);
  w.put(flags);
  put_affine(p.stride, flags & wire::kStrideRankFlag);
  put_affine(p.start, flags & wire::kStartRankFlag);
}

inline OffsetPattern decode_offset_pattern(ByteReader& r) {
  auto tag_offset = r.offset();
  auto tag = r.get<std::uint8_t>();
  auto get_affine = [&](bool rank) {
    RankAffine c;
    if (rank) {
      c.per_rank = r.get<std::int64_t>();
      if (c.per_rank == 0) throw DecodeError(r.offset(), "rank-linear coefficient with zero slope");
    }
    c.base = r.get<std::int64_t>();
    return c;
  };
  switch (tag) {
    case wire::kLiteral:
      return OffsetPattern::literal(r.get<std::int64_t>());
    case wire::kIterLinear: {
      auto a = r.get<std::int64_t>();
      auto b = r.get<std::int64_t>();
      return OffsetPattern::iter_linear(a, b);
    }
    case wire::kRankLiteral:
      return {OffsetPattern::Kind::Literal, {}, get_affine(true)};
    case wire::kRankIterLinear: {
      auto flags = r.get<std::uint8_t>();
      if (flags == 0 || (flags & ~3u) != 0) throw DecodeError(r.offset(), "bad offset pattern flags");
      OffsetPattern p{OffsetPattern::Kind::IterLinear, {}, {}};
      p.stride = get_affine(flags & wire::kStrideRankFlag);
      p.start = get_affine(flags & wire::kStartRankFlag);
      return p;
    }
    default:
      throw DecodeError(tag_offset, "unknown offset pattern tag " + std::to_string(tag));
  }
}

namespace detail {

inline void encode_fields(ByteWriter& w, const SignatureFields& f, bool mask_offsets) {
  w.put(f.func.value);
  w.put(f.call_depth);
  w.put(f.thread_id);
  if (f.args.size() > 0xFFFF) throw Error(Errc::InvalidRecord, "too many arguments");
  w.put(static_cast<std::uint16_t>(f.args.size()));
  for (const auto& arg : f.args) {
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, std::int64_t>) {
            w.put(wire::kInt);
            w.put(v);
          } else if constexpr (std::is_same_v<T, std::string>) {
            w.put(wire::kStr);
            w.put_string(v);
          } else if constexpr (std::is_same_v<T, LocalHandle>) {
            w.put(wire::kHandle);
            w.put(v.value);
          } else if constexpr (std::is_same_v<T, UniqueHandle>) {
            w.put(wire::kUniqueHandle);
            w.put(v.value);
          } else {
            if (mask_offsets) {
              w.put(wire::kMasked);
            } else {
              w.put(wire::kOffset);
              encode_offset_pattern(w, v);
            }
          }
        },
        arg);
  }
}

}  // namespace detail

/// Canonical bytes: u16 func, u8 depth, u32 thread, u16 arg count, then each
/// argument as tag byte + payload. Little-endian throughout.
inline CallSignature make_signature(const SignatureFields& fields) {
  ByteWriter w;
  detail::encode_fields(w, fields, false);
  return CallSignature{std::move(w).take()};
}

inline CallSignature make_signature(const CallRecord& record) { return make_signature(record.fields()); }

/// Signature bytes with every offset-pattern argument replaced by a mask
/// marker. Calls that differ only in their offsets share this key.
inline std::string masked_key(const SignatureFields& fields) {
  ByteWriter w;
  detail::encode_fields(w, fields, true);
  return std::move(w).take();
}

inline SignatureFields decode_signature(std::string_view bytes, std::size_t base_offset = 0) {
  ByteReader r(bytes, base_offset);
  SignatureFields f;
  f.func = FunctionId{r.get<std::uint16_t>()};
  f.call_depth = r.get<std::uint8_t>();
  f.thread_id = r.get<std::uint32_t>();
  auto n = r.get<std::uint16_t>();
  f.args.reserve(n);
  for (std::uint16_t i = 0; i < n; ++i) {
    auto tag_offset = r.offset();
    switch (auto tag = r.get<std::uint8_t>()) {
      case wire::kInt: f.args.emplace_back(r.get<std::int64_t>()); break;
      case wire::kStr: f.args.emplace_back(std::string(r.get_string())); break;
      case wire::kHandle: f.args.emplace_back(LocalHandle{r.get<std::uint32_t>()}); break;
      case wire::kUniqueHandle: f.args.emplace_back(UniqueHandle{r.get<std::uint32_t>()}); break;
      case wire::kOffset: f.args.emplace_back(decode_offset_pattern(r)); break;
      default: throw DecodeError(tag_offset, "unknown argument tag " + std::to_string(tag));
    }
  }
  r.expect_done("signature");
  return f;
}

inline void validate_record(const FunctionRegistry& registry, const SignatureFields& fields) {
  if (!registry.contains(fields.func)) {
    throw Error(Errc::UnknownFunction, "function id " + std::to_string(fields.func.value));
  }
  const auto& info = registry.info(fields.func);
  if (fields.args.size() != info.arity) {
    throw Error(Errc::InvalidRecord, info.name + " expects " + std::to_string(info.arity) +
                                         " arguments, got " + std::to_string(fields.args.size()));
  }
  for (std::uint32_t i = 0; i < fields.args.size(); ++i) {
    bool is_offset = std::holds_alternative<OffsetPattern>(fields.args[i]);
    if (is_offset && !info.is_offset_slot(i)) {
      throw Error(Errc::InvalidRecord,
                  info.name + ": offset pattern in non-offset slot " + std::to_string(i));
    }
  }
}

inline std::string format_arg(const ArgValue& arg) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, std::string>) {
          return v;
        } else if constexpr (std::is_same_v<T, LocalHandle>) {
          return "fd:" + std::to_string(v.value);
        } else if constexpr (std::is_same_v<T, UniqueHandle>) {
          return "uid:" + std::to_string(v.value);
        } else {
          auto coef = [](const RankAffine& c) {
            if (!c.is_rank_linear()) return std::to_string(c.base);
            return "(rank*" + std::to_string(c.per_rank) + "+" + std::to_string(c.base) + ")";
          };
          if (v.kind == OffsetPattern::Kind::Literal) return coef(v.start);
          return "i*" + coef(v.stride) + "+" + coef(v.start);
        }
      },
      arg);
}

}  // namespace iotrace
