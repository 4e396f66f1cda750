#pragma once

// On-disk trace archive.
//
// A directory with five files:
//   grammars.dat    unique grammars
//   cst.dat         merged call signature table
//   index.dat       per-rank grammar index
//   timestamps.dat  per-rank deflated timestamp blocks behind an offset header
//   meta.txt        sorted key=value lines
//
// Each .dat file starts with "RCTG", u32 version, u64 payload length and the
// CRC-32 of the payload. meta.txt carries a checksum line over its other
// lines. Readers verify both before decoding anything.

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "iotrace/bytes.hpp"
#include "iotrace/error.hpp"
#include "iotrace/finalize.hpp"
#include "iotrace/grammar.hpp"
#include "iotrace/model.hpp"
#include "iotrace/pattern.hpp"
#include "iotrace/session.hpp"
#include "iotrace/signature_table.hpp"

namespace iotrace {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr char kMagic[4] = {'R', 'C', 'T', 'G'};
inline constexpr std::size_t kHeaderSize = 4 + 4 + 8 + 4;
inline constexpr const char* kToolVersion = "iotrace 0.1.0";

namespace files {
inline constexpr const char* kGrammars = "grammars.dat";
inline constexpr const char* kCst = "cst.dat";
inline constexpr const char* kIndex = "index.dat";
inline constexpr const char* kTimestamps = "timestamps.dat";
inline constexpr const char* kMeta = "meta.txt";
}  // namespace files

/// Application-level information stored next to the compressed trace.
struct ArchiveMeta {
  std::vector<FunctionInfo> functions;
  std::uint32_t rank_count = 0;
  double time_resolution = 1e-7;  // seconds per tick
  std::optional<FilterConfig> filter;
  bool intra_pattern = true;
  bool inter_pattern = true;
  std::string tool_version = kToolVersion;
  std::map<std::string, std::string> extra;  // free-form, e.g. the workload spec

  friend bool operator==(const ArchiveMeta&, const ArchiveMeta&) = default;
};

namespace detail {

inline std::uint32_t crc32_of(std::string_view data) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

inline std::string frame(std::string_view payload) {
  ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put(kFormatVersion);
  w.put(static_cast<std::uint64_t>(payload.size()));
  w.put(crc32_of(payload));
  w.put_bytes(payload);
  return std::move(w).take();
}

/// Validates the frame and returns the payload.
inline std::string_view unframe(std::string_view file, const std::string& name) {
  try {
    ByteReader r(file);
    if (r.get_bytes(4) != std::string_view(kMagic, 4)) throw CorruptArchiveError(name, 0, "bad magic");
    if (auto v = r.get<std::uint32_t>(); v != kFormatVersion) {
      throw CorruptArchiveError(name, 4, "unsupported version " + std::to_string(v));
    }
    auto len = r.get<std::uint64_t>();
    auto crc = r.get<std::uint32_t>();
    if (len != r.remaining()) throw CorruptArchiveError(name, 8, "payload length mismatch");
    auto payload = r.get_bytes(len);
    if (crc32_of(payload) != crc) throw CorruptArchiveError(name, 16, "checksum mismatch");
    return payload;
  } catch (const DecodeError& e) {
    throw CorruptArchiveError(name, e.offset(), "truncated header");
  }
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CorruptArchiveError(p.filename().string(), 0, "missing or unreadable");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

inline void write_file(const std::filesystem::path& p, std::string_view data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  out.close();
  if (!out) throw Error(Errc::IoFailure, "cannot write " + p.string());
}

inline std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

inline std::string meta_body(const std::map<std::string, std::string>& kv) {
  std::string body;
  for (const auto& [k, v] : kv) body += k + "=" + v + "\n";
  return body;
}

inline std::string format_resolution(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline std::string serialize_meta(const ArchiveMeta& meta) {
  std::map<std::string, std::string> kv;
  kv["format_version"] = std::to_string(kFormatVersion);
  kv["rank_count"] = std::to_string(meta.rank_count);
  kv["time_resolution"] = detail::format_resolution(meta.time_resolution);
  kv["tool_version"] = meta.tool_version;
  kv["timestamp_codec"] = "deflate";
  kv["intra_pattern"] = meta.intra_pattern ? "on" : "off";
  kv["inter_pattern"] = meta.inter_pattern ? "on" : "off";
  kv["function_count"] = std::to_string(meta.functions.size());
  for (std::size_t i = 0; i < meta.functions.size(); ++i) {
    const auto& f = meta.functions[i];
    char key[32];
    std::snprintf(key, sizeof key, "function.%05zu", i);
    nlohmann::ordered_json j = {{"name", f.name},   {"arity", f.arity}, {"offset_slots", f.offset_slots},
                                {"layer", f.layer}, {"path_slot", nullptr}};
    if (f.path_slot) j["path_slot"] = *f.path_slot;
    kv[key] = j.dump();
  }
  if (meta.filter) {
    nlohmann::ordered_json j = {{"prefixes", meta.filter->prefixes}, {"enabled_layers", nullptr}};
    if (meta.filter->enabled_layers) j["enabled_layers"] = *meta.filter->enabled_layers;
    kv["filter"] = j.dump();
  } else {
    kv["filter"] = "none";
  }
  for (const auto& [k, v] : meta.extra) kv["x." + k] = v;
  for (const auto& [k, v] : kv) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw Error(Errc::InvalidArgument, "metadata entry '" + k + "' not representable");
    }
  }
  auto body = detail::meta_body(kv);
  kv["checksum"] = detail::hex32(detail::crc32_of(body));
  return detail::meta_body(kv);
}

inline ArchiveMeta parse_meta(std::string_view text) {
  const std::string name = files::kMeta;
  std::map<std::string, std::string> kv;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) throw CorruptArchiveError(name, pos, "unterminated line");
    auto line = text.substr(pos, nl - pos);
    auto eq = line.find('=');
    if (eq == std::string_view::npos || eq == 0) throw CorruptArchiveError(name, pos, "malformed line");
    if (!kv.emplace(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1))).second) {
      throw CorruptArchiveError(name, pos, "duplicate key");
    }
    pos = nl + 1;
  }
  auto it = kv.find("checksum");
  if (it == kv.end()) throw CorruptArchiveError(name, 0, "no checksum");
  auto expected = it->second;
  kv.erase(it);
  auto body = detail::meta_body(kv);
  if (detail::hex32(detail::crc32_of(body)) != expected) throw CorruptArchiveError(name, 0, "checksum mismatch");
  kv["checksum"] = expected;
  if (detail::meta_body(kv) != text) throw CorruptArchiveError(name, 0, "keys not in canonical order");
  kv.erase("checksum");

  auto need = [&](const std::string& key) -> const std::string& {
    auto f = kv.find(key);
    if (f == kv.end()) throw CorruptArchiveError(name, 0, "missing key " + key);
    return f->second;
  };
  auto to_u32 = [&](const std::string& key) {
    const auto& v = need(key);
    std::uint64_t x = 0;
    if (v.empty() || v.size() > 10 || v.find_first_not_of("0123456789") != std::string::npos ||
        (x = std::stoull(v)) > UINT32_MAX) {
      throw CorruptArchiveError(name, 0, "bad integer for " + key);
    }
    return static_cast<std::uint32_t>(x);
  };
  auto to_bool = [&](const std::string& key) {
    const auto& v = need(key);
    if (v != "on" && v != "off") throw CorruptArchiveError(name, 0, "bad toggle for " + key);
    return v == "on";
  };

  ArchiveMeta meta;
  if (to_u32("format_version") != kFormatVersion) throw CorruptArchiveError(name, 0, "unsupported version");
  if (need("timestamp_codec") != "deflate") throw CorruptArchiveError(name, 0, "unknown timestamp codec");
  meta.rank_count = to_u32("rank_count");
  meta.tool_version = need("tool_version");
  meta.intra_pattern = to_bool("intra_pattern");
  meta.inter_pattern = to_bool("inter_pattern");
  try {
    meta.time_resolution = std::stod(need("time_resolution"));
    if (!(meta.time_resolution > 0)) throw CorruptArchiveError(name, 0, "bad time resolution");
    auto nfun = to_u32("function_count");
    for (std::uint32_t i = 0; i < nfun; ++i) {
      char key[32];
      std::snprintf(key, sizeof key, "function.%05u", i);
      auto j = nlohmann::json::parse(need(key));
      FunctionInfo f;
      f.name = j.at("name").get<std::string>();
      f.arity = j.at("arity").get<std::uint32_t>();
      f.offset_slots = j.at("offset_slots").get<std::vector<std::uint32_t>>();
      f.layer = j.at("layer").get<std::string>();
      if (!j.at("path_slot").is_null()) f.path_slot = j.at("path_slot").get<std::uint32_t>();
      if (f.name.empty()) throw CorruptArchiveError(name, 0, "empty function name");
      if (!std::is_sorted(f.offset_slots.begin(), f.offset_slots.end())) throw CorruptArchiveError(name, 0, "unsorted slots");
      for (auto s : f.offset_slots) {
        if (s >= f.arity) throw CorruptArchiveError(name, 0, "offset slot out of range");
      }
      if (f.path_slot && *f.path_slot >= f.arity) throw CorruptArchiveError(name, 0, "path slot out of range");
      meta.functions.push_back(std::move(f));
    }
    if (auto filter = need("filter"); filter != "none") {
      auto j = nlohmann::json::parse(filter);
      FilterConfig fc;
      fc.prefixes = j.at("prefixes").get<std::vector<std::string>>();
      if (!j.at("enabled_layers").is_null()) fc.enabled_layers = j.at("enabled_layers").get<std::set<std::string>>();
      meta.filter = std::move(fc);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArchiveError(name, 0, std::string("bad metadata value: ") + e.what());
  } catch (const std::logic_error& e) {
    throw CorruptArchiveError(name, 0, std::string("bad metadata value: ") + e.what());
  }
  for (const auto& [k, v] : kv) {
    if (k.starts_with("x.")) meta.extra[k.substr(2)] = v;
  }
  return meta;
}

/// File name -> file bytes for a complete archive.
inline std::map<std::string, std::string> encode_archive(const MergeResult& result, const ArchiveMeta& meta) {
  if (meta.rank_count != result.rank_count()) {
    throw Error(Errc::InvalidArgument, "metadata rank count differs from trace");
  }
  ByteWriter g;
  g.put(static_cast<std::uint32_t>(result.grammars.size()));
  for (const auto& gr : result.grammars) g.put_string(gr.serialize());

  ByteWriter idx;
  idx.put(static_cast<std::uint32_t>(result.cfg_index.size()));
  for (auto i : result.cfg_index) idx.put(i);

  // Header: u32 rank count, then per rank u64 block offset, u64 block
  // length, u64 call count. Blocks follow in rank order.
  ByteWriter ts;
  const auto ranks = result.timestamps.size();
  ts.put(static_cast<std::uint32_t>(ranks));
  std::uint64_t offset = 0;
  for (std::size_t r = 0; r < ranks; ++r) {
    ts.put(offset);
    ts.put(static_cast<std::uint64_t>(result.timestamps[r].size()));
    ts.put(result.call_counts[r]);
    offset += result.timestamps[r].size();
  }
  for (const auto& block : result.timestamps) ts.put_bytes(block);

  std::map<std::string, std::string> out;
  out[files::kGrammars] = detail::frame(g.bytes());
  out[files::kCst] = detail::frame(result.cst.serialize());
  out[files::kIndex] = detail::frame(idx.bytes());
  out[files::kTimestamps] = detail::frame(ts.bytes());
  out[files::kMeta] = serialize_meta(meta);
  return out;
}

inline void write_archive(const MergeResult& result, const ArchiveMeta& meta, const std::filesystem::path& dir) {
  auto encoded = encode_archive(result, meta);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  for (const auto& [name, bytes] : encoded) detail::write_file(dir / name, bytes);
}

/// A fully validated archive held in memory.
class TraceArchive {
 public:
  static TraceArchive open(const std::filesystem::path& dir) {
    TraceArchive a;
    a.meta_ = parse_meta(load(a, dir, files::kMeta));
    a.registry_ = FunctionRegistry(a.meta_.functions);
    a.decode_grammars(load(a, dir, files::kGrammars));
    a.decode_cst(load(a, dir, files::kCst));
    a.decode_index(load(a, dir, files::kIndex));
    a.decode_timestamps(load(a, dir, files::kTimestamps));
    a.cross_check();
    return a;
  }

  const ArchiveMeta& meta() const noexcept { return meta_; }
  const MergeResult& result() const noexcept { return result_; }
  const FunctionRegistry& registry() const noexcept { return registry_; }
  std::uint32_t rank_count() const noexcept { return meta_.rank_count; }
  /// Byte size of each file, keyed by file name.
  const std::map<std::string, std::uint64_t>& file_sizes() const noexcept { return sizes_; }

  std::vector<TimestampPair> timestamps(std::uint32_t rank) const {
    check_rank(rank);
    try {
      return unpack_timestamps(result_.timestamps[rank], result_.call_counts[rank], ts_offsets_[rank]);
    } catch (const DecodeError& e) {
      throw CorruptArchiveError(files::kTimestamps, e.offset(), e.what());
    }
  }

  /// Decompresses one rank's full call stream.
  std::vector<CallRecord> read_records(std::uint32_t rank) const {
    auto ts = timestamps(rank);
    const auto& g = result_.grammars[result_.cfg_index[rank]];
    OffsetDecoder decoder(rank);
    std::vector<CallRecord> out;
    out.reserve(ts.size());
    try {
      g.for_each_terminal(
          [&](std::uint32_t t) {
            const auto& term = terminals_[t];
            CallRecord rec{term.fields.func, term.fields.args, term.fields.thread_id, term.fields.call_depth, 0, 0};
            if (term.has_offsets) decoder.decode(rec.args, term.key_id);
            const auto& p = ts[out.size()];
            rec.t_entry = p.entry;
            rec.t_exit = p.exit;
            out.push_back(std::move(rec));
          },
          ts.size());
    } catch (const CorruptArchiveError&) {
      throw;
    } catch (const Error& e) {
      throw CorruptArchiveError(files::kCst, 0, std::string("rank ") + std::to_string(rank) + ": " + e.what());
    }
    return out;
  }

 private:
  struct Terminal {
    SignatureFields fields;
    bool has_offsets = false;
    std::size_t key_id = 0;
  };

  static std::string load(TraceArchive& a, const std::filesystem::path& dir, const char* name) {
    auto bytes = detail::read_file(dir / name);
    a.sizes_[name] = bytes.size();
    if (std::string_view(name) == files::kMeta) return bytes;
    return std::string(detail::unframe(bytes, name));
  }

  template <class F>
  static void located(const char* file, F&& body) {
    try {
      body();
    } catch (const CorruptArchiveError&) {
      throw;
    } catch (const DecodeError& e) {
      throw CorruptArchiveError(file, kHeaderSize + e.offset(), e.what());
    } catch (const Error& e) {
      throw CorruptArchiveError(file, kHeaderSize, e.what());
    }
  }

  void decode_grammars(std::string_view payload) {
    located(files::kGrammars, [&] {
      ByteReader r(payload);
      auto n = r.get<std::uint32_t>();
      if (n > r.remaining() / 4) throw DecodeError(r.offset(), "grammar count exceeds data");
      std::set<std::string> seen;
      for (std::uint32_t i = 0; i < n; ++i) {
        auto at = r.offset();
        auto bytes = r.get_string();
        result_.grammars.push_back(Grammar::deserialize(bytes, at + 4));
        if (!seen.emplace(bytes).second) throw DecodeError(at, "duplicate grammar");
      }
      r.expect_done("grammars");
    });
  }

  void decode_cst(std::string_view payload) {
    located(files::kCst, [&] {
      result_.cst = SignatureTable::deserialize(payload);
      std::unordered_map<std::string, std::size_t> keys;
      for (const auto& e : result_.cst.entries()) {
        Terminal t;
        t.fields = decode_signature(e.signature.bytes);
        validate_record(registry_, t.fields);
        for (const auto& arg : t.fields.args) t.has_offsets = t.has_offsets || std::holds_alternative<OffsetPattern>(arg);
        t.key_id = keys.emplace(masked_key(t.fields), keys.size()).first->second;
        terminals_.push_back(std::move(t));
      }
    });
  }

  void decode_index(std::string_view payload) {
    located(files::kIndex, [&] {
      ByteReader r(payload);
      auto n = r.get<std::uint32_t>();
      if (n != meta_.rank_count) throw DecodeError(0, "rank count differs from metadata");
      for (std::uint32_t i = 0; i < n; ++i) {
        auto at = r.offset();
        auto v = r.get<std::uint32_t>();
        if (v >= result_.grammars.size()) throw DecodeError(at, "grammar index out of range");
        result_.cfg_index.push_back(v);
      }
      r.expect_done("index");
    });
  }

  void decode_timestamps(std::string_view payload) {
    located(files::kTimestamps, [&] {
      ByteReader r(payload);
      auto n = r.get<std::uint32_t>();
      if (n != meta_.rank_count) throw DecodeError(0, "rank count differs from metadata");
      if (n > r.remaining() / 24) throw DecodeError(r.offset(), "rank count exceeds data");
      const std::size_t data_start = 4 + std::size_t{n} * 24;
      std::uint64_t expected = 0;
      std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
      for (std::uint32_t i = 0; i < n; ++i) {
        auto at = r.offset();
        auto off = r.get<std::uint64_t>();
        auto len = r.get<std::uint64_t>();
        auto pairs = r.get<std::uint64_t>();
        if (pairs > (std::uint64_t{1} << 40)) throw DecodeError(at + 16, "implausible call count");
        if (off != expected || len > payload.size() - data_start - off) {
          throw DecodeError(at, "timestamp block out of range");
        }
        expected += len;
        spans.emplace_back(off, len);
        result_.call_counts.push_back(pairs);
      }
      if (data_start + expected != payload.size()) throw DecodeError(data_start, "timestamp blocks do not fill file");
      for (auto [off, len] : spans) {
        result_.timestamps.emplace_back(payload.substr(data_start + off, len));
        ts_offsets_.push_back(kHeaderSize + data_start + off);
      }
    });
  }

  void cross_check() {
    for (std::size_t gi = 0; gi < result_.grammars.size(); ++gi) {
      for (auto t : result_.grammars[gi].terminals()) {
        if (t >= terminals_.size()) {
          throw CorruptArchiveError(files::kGrammars, kHeaderSize, "grammar references unknown terminal");
        }
      }
    }
    for (std::uint32_t r = 0; r < meta_.rank_count; ++r) {
      const auto& g = result_.grammars[result_.cfg_index[r]];
      std::uint64_t len = 0;
      try {
        len = g.expanded_length(result_.call_counts[r] + 1);
      } catch (const Error&) {
        throw CorruptArchiveError(files::kGrammars, kHeaderSize, "grammar longer than recorded call count");
      }
      if (len != result_.call_counts[r]) {
        throw CorruptArchiveError(files::kTimestamps, kHeaderSize, "call count differs from grammar length");
      }
    }
  }

  void check_rank(std::uint32_t rank) const {
    if (rank >= meta_.rank_count) throw Error(Errc::InvalidArgument, "rank " + std::to_string(rank) + " out of range");
  }

  ArchiveMeta meta_;
  FunctionRegistry registry_;
  MergeResult result_;
  std::vector<Terminal> terminals_;
  std::vector<std::size_t> ts_offsets_;
  std::map<std::string, std::uint64_t> sizes_;
};

}  // namespace iotrace
