#pragma once

// Inter-process finalization: rank-linear rewrite of the per-rank tables,
// table merge, grammar remap, grammar deduplication and timestamp packing.

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "iotrace/bytes.hpp"
#include "iotrace/error.hpp"
#include "iotrace/grammar.hpp"
#include "iotrace/pattern.hpp"
#include "iotrace/session.hpp"
#include "iotrace/signature_table.hpp"

namespace iotrace {

/// Raw timestamp block: little-endian u32 (entry, exit) pairs in call order.
inline std::string raw_timestamp_block(std::span<const TimestampPair> log) {
  ByteWriter w;
  for (const auto& p : log) {
    w.put(p.entry);
    w.put(p.exit);
  }
  return std::move(w).take();
}

/// Raw deflate (no zlib or gzip wrapper) of the raw block.
inline std::string pack_timestamps(std::span<const TimestampPair> log, int level = Z_BEST_SPEED) {
  const auto raw = raw_timestamp_block(log);
  // Window and hash sized to the input.
  int window_bits = 9;
  while (window_bits < 15 && (std::size_t{1} << window_bits) < raw.size()) ++window_bits;
  const int mem_level = std::clamp(window_bits - 6, 1, 8);
  z_stream zs{};
  if (deflateInit2(&zs, level, Z_DEFLATED, -window_bits, mem_level, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw Error(Errc::IoFailure, "deflateInit2 failed");
  }
  std::string out(deflateBound(&zs, static_cast<uLong>(raw.size())), '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(raw.data()));
  zs.avail_in = static_cast<uInt>(raw.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  int rc = deflate(&zs, Z_FINISH);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error(Errc::IoFailure, "deflate did not finish");
  return out;
}

/// Inverse of pack_timestamps. `pairs` is the expected call count; any
/// mismatch in the inflated size is reported as corruption.
inline std::vector<TimestampPair> unpack_timestamps(std::string_view packed, std::uint64_t pairs,
                                                    std::size_t base_offset = 0) {
  if (pairs > (std::uint64_t{1} << 40)) throw DecodeError(base_offset, "implausible timestamp count");
  std::string raw(pairs * 8, '\0');
  z_stream zs{};
  if (inflateInit2(&zs, -15) != Z_OK) throw Error(Errc::IoFailure, "inflateInit2 failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(packed.data()));
  zs.avail_in = static_cast<uInt>(packed.size());
  zs.next_out = reinterpret_cast<Bytef*>(raw.data());
  zs.avail_out = static_cast<uInt>(raw.size());
  int rc = inflate(&zs, Z_FINISH);
  const auto produced = zs.total_out;
  const auto consumed = zs.total_in;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != raw.size() || consumed != packed.size()) {
    throw DecodeError(base_offset + consumed, "timestamp block does not inflate to " + std::to_string(pairs) + " pairs");
  }
  ByteReader r(raw);
  std::vector<TimestampPair> log(pairs);
  for (auto& p : log) {
    p.entry = r.get<std::uint32_t>();
    p.exit = r.get<std::uint32_t>();
  }
  return log;
}

struct MergeResult {
  SignatureTable cst;
  std::vector<Grammar> grammars;        // unique, first-occurrence order
  std::vector<std::uint32_t> cfg_index;  // per rank
  std::vector<std::string> timestamps;  // packed, per rank
  std::vector<std::uint64_t> call_counts;  // recorded calls per rank

  std::size_t rank_count() const { return cfg_index.size(); }
  friend bool operator==(const MergeResult&, const MergeResult&) = default;
};

struct FinalizeOptions {
  bool inter_pattern = true;
};

inline MergeResult finalize_trace(std::vector<RankLocal> locals, FinalizeOptions options = {}) {
  for (std::size_t r = 0; r < locals.size(); ++r) {
    if (locals[r].rank != r) {
      throw Error(Errc::InvalidArgument, "rank snapshots must be ordered 0..P-1");
    }
    if (locals[r].timestamps.size() != locals[r].grammar.expanded_length()) {
      throw Error(Errc::InvalidArgument, "rank " + std::to_string(r) + " timestamp count differs from call count");
    }
  }
  MergeResult out;
  if (locals.empty()) return out;

  std::vector<SignatureTable> tables;
  tables.reserve(locals.size());
  for (auto& l : locals) tables.push_back(std::move(l.table));
  if (options.inter_pattern) tables = finalize_patterns(std::move(tables));

  auto merged = merge_tables(tables);
  out.cst = std::move(merged.merged);

  std::unordered_map<std::string, std::uint32_t> seen;
  for (std::size_t r = 0; r < locals.size(); ++r) {
    auto g = remap_terminals(locals[r].grammar, merged.remaps[r]);
    auto bytes = g.serialize();
    auto [it, inserted] = seen.emplace(std::move(bytes), static_cast<std::uint32_t>(out.grammars.size()));
    if (inserted) out.grammars.push_back(std::move(g));
    out.cfg_index.push_back(it->second);
    out.call_counts.push_back(locals[r].timestamps.size());
    out.timestamps.push_back(pack_timestamps(locals[r].timestamps));
  }
  return out;
}

}  // namespace iotrace
