#pragma once

// Per-rank tracing session. begin_call/end_call stand in for the prologue and
// epilogue of an intercepted function: they track call depth per thread,
// capture simulated timestamps, filter, and feed recorded calls through the
// pattern tracker, the signature table and the grammar builder.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "iotrace/error.hpp"
#include "iotrace/grammar.hpp"
#include "iotrace/model.hpp"
#include "iotrace/pattern.hpp"
#include "iotrace/signature_table.hpp"

namespace iotrace {

struct FilterConfig {
  std::vector<std::string> prefixes;  // empty: no path filtering
  std::optional<std::set<std::string>> enabled_layers;  // nullopt: all layers

  void validate() const {
    for (const auto& p : prefixes) {
      if (p.empty()) throw Error(Errc::InvalidArgument, "filter prefixes must be non-empty");
    }
  }
  friend bool operator==(const FilterConfig&, const FilterConfig&) = default;
};

struct TracerOptions {
  bool intra_pattern = true;
  std::optional<FilterConfig> filter;
  std::uint32_t call_ticks = 1;  // entry -> exit
  std::uint32_t gap_ticks = 1;   // exit -> next event
  bool retain_records = false;   // keep an uncompressed copy for verification
};

struct CallToken {
  FunctionId func;
  std::uint32_t thread_id = 0;
  std::uint8_t depth = 0;
  std::uint32_t t_entry = 0;
  std::uint64_t serial = 0;
};

/// What a rank hands to the finalization pass.
struct RankLocal {
  std::uint32_t rank = 0;
  Grammar grammar;
  SignatureTable table;
  std::vector<TimestampPair> timestamps;
  std::vector<CallRecord> records;  // only with retain_records
};

class RankTracer {
 public:
  static constexpr std::size_t kMaxDepth = 255;

  RankTracer(std::uint32_t rank, const FunctionRegistry& registry, TracerOptions options = {},
             const HandleRegistry* handles = nullptr)
      : rank_(rank), registry_(registry), options_(std::move(options)), handles_(handles) {
    if (options_.filter) options_.filter->validate();
  }

  std::uint32_t rank() const noexcept { return rank_; }

  CallToken begin_call(std::uint32_t thread_id, FunctionId func) {
    std::lock_guard lock(mu_);
    if (!registry_.contains(func)) throw Error(Errc::UnknownFunction, "function id " + std::to_string(func.value));
    auto& th = threads_[thread_id];
    if (th.stack.size() > kMaxDepth) throw Error(Errc::DepthOverflow, "call depth exceeds 255");
    CallToken token{func, thread_id, static_cast<std::uint8_t>(th.stack.size()), tick(options_.call_ticks),
                    next_serial_++};
    th.stack.push_back({token.serial, th.pending.size()});
    th.pending.emplace_back();
    return token;
  }

  /// Completes the innermost open call of the token's thread. Returns whether
  /// the call was recorded (it may still be buffered until the thread's
  /// outermost call completes).
  bool end_call(const CallToken& token, std::vector<ArgValue> args) {
    std::lock_guard lock(mu_);
    auto it = threads_.find(token.thread_id);
    if (it == threads_.end() || it->second.stack.empty() || it->second.stack.back().serial != token.serial) {
      throw Error(Errc::StackMismatch, "call completed out of LIFO order on thread " + std::to_string(token.thread_id));
    }
    auto& th = it->second;
    const auto& info = registry_.info(token.func);
    check_args(info, args);

    const auto slot = th.stack.back().slot;
    th.stack.pop_back();
    const auto t_exit = tick(options_.gap_ticks);

    bool recorded = passes_filter(info, args);
    if (recorded) {
      if (handles_) {
        for (auto& arg : args) {
          if (const auto* h = std::get_if<LocalHandle>(&arg)) {
            if (auto uid = handles_->lookup(rank_, *h)) arg = *uid;
          }
        }
      }
      th.pending[slot] = CallRecord{token.func, std::move(args), token.thread_id, token.depth, token.t_entry, t_exit};
    }
    if (th.stack.empty()) flush(th);
    return recorded;
  }

  /// Convenience for a leaf call.
  bool trace_call(std::uint32_t thread_id, FunctionId func, std::vector<ArgValue> args) {
    auto token = begin_call(thread_id, func);
    return end_call(token, std::move(args));
  }

  /// Lets simulated time pass without a call (compute phases, waits).
  void advance(std::uint32_t ticks) {
    std::lock_guard lock(mu_);
    tick(ticks);
  }

  std::size_t recorded_count() const {
    std::lock_guard lock(mu_);
    return timestamps_.size();
  }

  /// Terminal count of the table so far; lets callers watch it grow.
  std::size_t table_size() const { return table_.size(); }

  std::size_t depth(std::uint32_t thread_id) const {
    std::lock_guard lock(mu_);
    auto it = threads_.find(thread_id);
    return it == threads_.end() ? 0 : it->second.stack.size();
  }

  RankLocal finalize() const& {
    std::lock_guard lock(mu_);
    check_balanced();
    return RankLocal{rank_, builder_.snapshot(), table_, timestamps_, records_};
  }

  /// Same result; moves the buffers out instead of copying them.
  RankLocal finalize() && {
    std::lock_guard lock(mu_);
    check_balanced();
    return RankLocal{rank_, builder_.snapshot(), std::move(table_), std::move(timestamps_), std::move(records_)};
  }

 private:
  struct Open {
    std::uint64_t serial;
    std::size_t slot;
  };
  struct ThreadState {
    std::vector<Open> stack;
    // Completed or in-flight calls of the current outermost call, in entry
    // order. Filtered calls stay empty.
    std::vector<std::optional<CallRecord>> pending;
  };

  void check_balanced() const {
    for (const auto& [tid, th] : threads_) {
      if (!th.stack.empty()) {
        throw Error(Errc::UnbalancedCalls, "thread " + std::to_string(tid) + " has " +
                                               std::to_string(th.stack.size()) + " open calls");
      }
    }
  }

  std::uint32_t tick(std::uint32_t ticks) {
    if (clock_ > UINT32_MAX) throw Error(Errc::InvalidArgument, "simulated clock exceeds 32 bits");
    auto now = static_cast<std::uint32_t>(clock_);
    clock_ += ticks;
    return now;
  }

  static void check_args(const FunctionInfo& info, const std::vector<ArgValue>& args) {
    if (args.size() != info.arity) {
      throw Error(Errc::InvalidRecord, info.name + " expects " + std::to_string(info.arity) + " arguments, got " +
                                           std::to_string(args.size()));
    }
    for (std::uint32_t i = 0; i < args.size(); ++i) {
      bool is_int = std::holds_alternative<std::int64_t>(args[i]);
      if (info.is_offset_slot(i) && !is_int) {
        throw Error(Errc::InvalidRecord, info.name + ": offset slot " + std::to_string(i) + " must be an integer");
      }
      if (std::holds_alternative<OffsetPattern>(args[i])) {
        throw Error(Errc::InvalidRecord, info.name + ": raw calls cannot carry offset patterns");
      }
    }
    if (info.path_slot && !std::holds_alternative<std::string>(args[*info.path_slot])) {
      throw Error(Errc::InvalidRecord, info.name + ": path argument must be a string");
    }
  }

  bool passes_filter(const FunctionInfo& info, const std::vector<ArgValue>& args) {
    if (!options_.filter) return true;
    const auto& f = *options_.filter;
    if (f.enabled_layers && !f.enabled_layers->contains(info.layer)) return false;
    if (f.prefixes.empty()) return true;
    if (info.path_slot) {
      const auto& path = std::get<std::string>(args[*info.path_slot]);
      bool match = false;
      for (const auto& p : f.prefixes) match = match || path.starts_with(p);
      // A handle returned for an unmatched path may reuse a tracked number.
      for (const auto& arg : args) {
        if (const auto* h = std::get_if<LocalHandle>(&arg)) {
          if (match) {
            tracked_.insert(h->value);
          } else {
            tracked_.erase(h->value);
          }
        }
      }
      return match;
    }
    bool has_handle = false;
    for (const auto& arg : args) {
      if (const auto* h = std::get_if<LocalHandle>(&arg)) {
        has_handle = true;
        if (tracked_.contains(h->value)) return true;
      }
    }
    return !has_handle;
  }

  void flush(ThreadState& th) {
    for (auto& rec : th.pending) {
      if (rec) ingest(std::move(*rec));
    }
    th.pending.clear();
  }

  void ingest(CallRecord rec) {
    const auto& info = registry_.info(rec.func);
    SignatureFields f = rec.fields();
    for (auto s : info.offset_slots) f.args[s] = OffsetPattern::literal(0);
    if (!info.offset_slots.empty()) {
      const auto key = masked_key(f);
      for (auto s : info.offset_slots) {
        auto value = std::get<std::int64_t>(rec.args[s]);
        f.args[s] = options_.intra_pattern ? patterns_.encode(key + static_cast<char>(s), value)
                                           : OffsetPattern::literal(value);
      }
    }
    builder_.append(table_.intern(make_signature(f)));
    timestamps_.push_back({rec.t_entry, rec.t_exit});
    if (options_.retain_records) records_.push_back(std::move(rec));
  }

  std::uint32_t rank_;
  const FunctionRegistry& registry_;
  TracerOptions options_;
  const HandleRegistry* handles_;

  mutable std::mutex mu_;
  std::uint64_t clock_ = 0;
  std::uint64_t next_serial_ = 0;
  std::unordered_map<std::uint32_t, ThreadState> threads_;
  std::unordered_set<std::uint32_t> tracked_;
  PatternTracker patterns_;
  SignatureTable table_;
  SequiturBuilder builder_;
  std::vector<TimestampPair> timestamps_;
  std::vector<CallRecord> records_;
};

}  // namespace iotrace
