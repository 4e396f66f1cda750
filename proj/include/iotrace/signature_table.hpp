#pragma once

// Call signature table: interns signatures to dense terminal indices.

#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "iotrace/bytes.hpp"
#include "iotrace/error.hpp"
#include "iotrace/model.hpp"

namespace iotrace {

class SignatureTable {
 public:
  struct Entry {
    CallSignature signature;
    std::uint64_t count = 0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  static constexpr std::uint64_t kMaxEntries = 0xFFFFFFFFull;  // indices 0 .. 2^32-2

  explicit SignatureTable(std::uint64_t max_entries = kMaxEntries) : max_entries_(max_entries) {}

  SignatureTable(const SignatureTable& other) {
    std::lock_guard lock(other.mu_);
    entries_ = other.entries_;
    index_ = other.index_;
    max_entries_ = other.max_entries_;
  }
  SignatureTable& operator=(const SignatureTable& other) {
    if (this != &other) {
      SignatureTable copy(other);
      std::lock_guard lock(mu_);
      entries_ = std::move(copy.entries_);
      index_ = std::move(copy.index_);
      max_entries_ = copy.max_entries_;
    }
    return *this;
  }
  SignatureTable(SignatureTable&& other) noexcept
      : entries_(std::move(other.entries_)),
        index_(std::move(other.index_)),
        max_entries_(other.max_entries_) {}
  SignatureTable& operator=(SignatureTable&& other) noexcept {
    entries_ = std::move(other.entries_);
    index_ = std::move(other.index_);
    max_entries_ = other.max_entries_;
    return *this;
  }

  /// Returns the terminal for `sig`, assigning the next dense index on first
  /// sight. Each call bumps the entry's count.
  std::uint32_t intern(const CallSignature& sig) {
    std::lock_guard lock(mu_);
    if (auto it = index_.find(sig); it != index_.end()) {
      ++entries_[it->second].count;
      return it->second;
    }
    if (entries_.size() >= max_entries_) {
      throw Error(Errc::TableFull, "signature table holds " + std::to_string(entries_.size()) + " entries");
    }
    auto idx = static_cast<std::uint32_t>(entries_.size());
    entries_.push_back(Entry{sig, 1});
    index_.emplace(sig, idx);
    return idx;
  }

  std::optional<std::uint32_t> find(const CallSignature& sig) const {
    std::lock_guard lock(mu_);
    auto it = index_.find(sig);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  CallSignature signature(std::uint32_t idx) const {
    std::lock_guard lock(mu_);
    return at(idx).signature;
  }

  std::uint64_t count(std::uint32_t idx) const {
    std::lock_guard lock(mu_);
    return at(idx).count;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

  bool empty() const { return size() == 0; }

  std::vector<Entry> entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

  /// Swaps the signature stored at `idx`, keeping its index and count.
  void replace_signature(std::uint32_t idx, CallSignature sig) {
    std::lock_guard lock(mu_);
    auto& entry = at(idx);
    if (entry.signature == sig) return;
    if (index_.contains(sig)) throw Error(Errc::InvalidArgument, "replacement signature already present");
    index_.erase(entry.signature);
    index_.emplace(sig, idx);
    entry.signature = std::move(sig);
  }

  /// Inserts an entry with an explicit count (merging and deserialization).
  std::uint32_t add(const CallSignature& sig, std::uint64_t count) {
    std::lock_guard lock(mu_);
    if (auto it = index_.find(sig); it != index_.end()) {
      entries_[it->second].count += count;
      return it->second;
    }
    if (entries_.size() >= max_entries_) throw Error(Errc::TableFull, "signature table full");
    auto idx = static_cast<std::uint32_t>(entries_.size());
    entries_.push_back(Entry{sig, count});
    index_.emplace(sig, idx);
    return idx;
  }

  /// u32 entry count, then per entry: u32 signature length, bytes, u64 count.
  std::string serialize() const {
    std::lock_guard lock(mu_);
    ByteWriter w;
    w.put(static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      w.put_string(e.signature.bytes);
      w.put(e.count);
    }
    return std::move(w).take();
  }

  static SignatureTable deserialize(std::string_view bytes, std::size_t base_offset = 0) {
    ByteReader r(bytes, base_offset);
    SignatureTable table;
    auto n = r.get<std::uint32_t>();
    if (n > r.remaining() / 12) throw DecodeError(r.offset(), "entry count exceeds data");
    for (std::uint32_t i = 0; i < n; ++i) {
      auto at = r.offset();
      CallSignature sig{std::string(r.get_string())};
      auto count = r.get<std::uint64_t>();
      if (count == 0) throw DecodeError(at, "zero call count");
      if (table.find(sig)) throw DecodeError(at, "duplicate signature");
      table.add(sig, count);
    }
    r.expect_done("signature table");
    return table;
  }

  friend bool operator==(const SignatureTable& a, const SignatureTable& b) {
    return a.entries() == b.entries();
  }

 private:
  Entry& at(std::uint32_t idx) {
    if (idx >= entries_.size()) throw Error(Errc::InvalidArgument, "terminal " + std::to_string(idx) + " not in table");
    return entries_[idx];
  }
  const Entry& at(std::uint32_t idx) const {
    if (idx >= entries_.size()) throw Error(Errc::InvalidArgument, "terminal " + std::to_string(idx) + " not in table");
    return entries_[idx];
  }

  mutable std::mutex mu_;
  std::vector<Entry> entries_;
  std::unordered_map<CallSignature, std::uint32_t, CallSignatureHash> index_;
  std::uint64_t max_entries_ = kMaxEntries;
};

struct MergedTables {
  SignatureTable merged;
  std::vector<std::vector<std::uint32_t>> remaps;  // remaps[rank][old] = new
};

/// Union of per-rank tables. Merged indices follow first appearance scanning
/// ranks in order, each in its own index order; counts are summed.
inline MergedTables merge_tables(std::span<const SignatureTable> tables) {
  if (tables.empty()) throw Error(Errc::InvalidArgument, "merge_tables needs at least one table");
  MergedTables out;
  out.remaps.reserve(tables.size());
  for (const auto& table : tables) {
    auto entries = table.entries();
    std::vector<std::uint32_t> remap;
    remap.reserve(entries.size());
    for (const auto& e : entries) remap.push_back(out.merged.add(e.signature, e.count));
    out.remaps.push_back(std::move(remap));
  }
  return out;
}

}  // namespace iotrace
