#pragma once

// Deterministic multi-rank workload simulation. Ranks run one after another
// in rank order; collective operations are plain function calls against a
// shared handle registry. Every run keeps an uncompressed copy of what each
// tracer recorded so archives can be checked against it.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "iotrace/archive.hpp"
#include "iotrace/finalize.hpp"
#include "iotrace/model.hpp"
#include "iotrace/pattern.hpp"
#include "iotrace/session.hpp"

namespace iotrace {

enum class WorkloadKind { SerialNested, Strided, IorLike, CheckpointSeries, CollectiveAgg, Random };

inline const std::map<WorkloadKind, std::string>& workload_names() {
  static const std::map<WorkloadKind, std::string> names{
      {WorkloadKind::SerialNested, "serial_nested"},   {WorkloadKind::Strided, "strided"},
      {WorkloadKind::IorLike, "ior_like"},             {WorkloadKind::CheckpointSeries, "checkpoint_series"},
      {WorkloadKind::CollectiveAgg, "collective_agg"}, {WorkloadKind::Random, "random"}};
  return names;
}

inline std::string to_string(WorkloadKind k) { return workload_names().at(k); }

inline WorkloadKind parse_workload_kind(std::string_view s) {
  for (const auto& [k, name] : workload_names()) {
    if (name == s) return k;
  }
  if (s == "strided_shared") return WorkloadKind::Strided;
  throw Error(Errc::InvalidArgument, "unknown workload kind '" + std::string(s) + "'");
}

/// Parameters of every generator. Each kind reads the fields it needs:
///   serial_nested      m outer iterations, n inner writes, size
///   strided            ranks, m, chunk
///   ior_like           ranks, block, transfer, m segments
///   checkpoint_series  ranks, files, m iterations per file, chunk
///   collective_agg     ranks, aggregators, m, chunk
///   random             ranks, seed, length, alphabet, threads
struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::Strided;
  std::uint32_t ranks = 1;
  std::uint32_t m = 1;
  std::uint32_t n = 1;
  std::int64_t size = 64;
  std::int64_t chunk = 10;
  std::int64_t block = 1024;
  std::int64_t transfer = 64;
  std::uint32_t files = 1;
  std::uint32_t aggregators = 1;
  std::uint64_t seed = 0;
  std::uint32_t length = 100;
  std::uint32_t alphabet = 4;
  std::uint32_t threads = 1;
  std::optional<FilterConfig> filter;
  bool intra_pattern = true;
  bool inter_pattern = true;

  void validate() const {
    auto positive = [](std::int64_t v, const char* what) {
      if (v < 1) throw Error(Errc::InvalidArgument, std::string(what) + " must be >= 1");
    };
    positive(ranks, "ranks");
    positive(m, "m");
    positive(n, "n");
    positive(size, "size");
    positive(chunk, "chunk");
    positive(block, "block");
    positive(transfer, "transfer");
    positive(files, "files");
    positive(aggregators, "aggregators");
    positive(alphabet, "alphabet");
    if (aggregators > ranks && kind == WorkloadKind::CollectiveAgg) {
      throw Error(Errc::InvalidArgument, "aggregators must not exceed ranks");
    }
    if (transfer > block) throw Error(Errc::InvalidArgument, "transfer must not exceed block");
    if (threads != 1 && threads != 2) throw Error(Errc::InvalidArgument, "threads must be 1 or 2");
    if (filter) filter->validate();
  }

  friend bool operator==(const WorkloadSpec&, const WorkloadSpec&) = default;
};

inline nlohmann::ordered_json to_json(const WorkloadSpec& s) {
  nlohmann::ordered_json j = {{"kind", to_string(s.kind)},
                              {"ranks", s.ranks},
                              {"m", s.m},
                              {"n", s.n},
                              {"size", s.size},
                              {"chunk", s.chunk},
                              {"block", s.block},
                              {"transfer", s.transfer},
                              {"files", s.files},
                              {"aggregators", s.aggregators},
                              {"seed", s.seed},
                              {"length", s.length},
                              {"alphabet", s.alphabet},
                              {"threads", s.threads},
                              {"intra_pattern", s.intra_pattern},
                              {"inter_pattern", s.inter_pattern},
                              {"filter", nullptr}};
  if (s.filter) {
    j["filter"] = {{"prefixes", s.filter->prefixes}, {"enabled_layers", nullptr}};
    if (s.filter->enabled_layers) j["filter"]["enabled_layers"] = *s.filter->enabled_layers;
  }
  return j;
}

inline WorkloadSpec workload_from_json(const nlohmann::json& j) {
  WorkloadSpec s;
  s.kind = parse_workload_kind(j.at("kind").get<std::string>());
  s.ranks = j.at("ranks");
  s.m = j.at("m");
  s.n = j.at("n");
  s.size = j.at("size");
  s.chunk = j.at("chunk");
  s.block = j.at("block");
  s.transfer = j.at("transfer");
  s.files = j.at("files");
  s.aggregators = j.at("aggregators");
  s.seed = j.at("seed");
  s.length = j.at("length");
  s.alphabet = j.at("alphabet");
  s.threads = j.at("threads");
  s.intra_pattern = j.at("intra_pattern");
  s.inter_pattern = j.at("inter_pattern");
  if (const auto& f = j.at("filter"); !f.is_null()) {
    FilterConfig fc;
    fc.prefixes = f.at("prefixes").get<std::vector<std::string>>();
    if (!f.at("enabled_layers").is_null()) fc.enabled_layers = f.at("enabled_layers").get<std::set<std::string>>();
    s.filter = std::move(fc);
  }
  return s;
}

/// The intercepted-function catalog used by every generator.
struct Catalog {
  FunctionRegistry registry;
  FunctionId open = registry.register_function("open", 3, {}, {"posix", 0});
  FunctionId close = registry.register_function("close", 1, {});
  FunctionId write = registry.register_function("write", 3, {});
  FunctionId read = registry.register_function("read", 3, {});
  FunctionId lseek = registry.register_function("lseek", 3, {1});
  FunctionId pwrite = registry.register_function("pwrite", 4, {3});
  FunctionId pread = registry.register_function("pread", 4, {3});
  FunctionId fsync = registry.register_function("fsync", 1, {});
  FunctionId mpi_open = registry.register_function("MPI_File_open", 4, {}, {"mpi", 1});
  FunctionId mpi_write_at = registry.register_function("MPI_File_write_at", 4, {1}, {"mpi", std::nullopt});
  FunctionId mpi_write_at_all = registry.register_function("MPI_File_write_at_all", 4, {1}, {"mpi", std::nullopt});
  FunctionId mpi_close = registry.register_function("MPI_File_close", 1, {}, {"mpi", std::nullopt});
  FunctionId send_marker = registry.register_function("send_marker", 1, {}, {"mpi", std::nullopt});
  FunctionId h5_create = registry.register_function("H5Fcreate", 3, {}, {"hdf5", 0});
  FunctionId h5_write = registry.register_function("H5Dwrite", 2, {}, {"hdf5", std::nullopt});
  FunctionId h5_close = registry.register_function("H5Fclose", 1, {}, {"hdf5", std::nullopt});
};

using OracleLog = std::vector<std::vector<CallRecord>>;

struct RunOutput {
  MergeResult result;
  ArchiveMeta meta;
  OracleLog oracle;
  /// Rank 0 table size after each outer iteration of the generator.
  std::vector<std::size_t> table_growth;
};

namespace detail {

inline ArgValue fd(std::uint32_t v) { return LocalHandle{v}; }
inline ArgValue i64(std::int64_t v) { return v; }
inline ArgValue str(std::string v) { return v; }

constexpr std::uint32_t kFd = 3;

struct Driver {
  const Catalog& cat;
  const WorkloadSpec& spec;
  RankTracer& t;
  std::uint32_t rank;
  std::vector<std::size_t>* growth;  // rank 0 only

  void call(FunctionId f, std::vector<ArgValue> args, std::uint32_t tid = 0) { t.trace_call(tid, f, std::move(args)); }
  void iteration_done() {
    if (growth) growth->push_back(t.table_size());
  }

  void serial_nested() {
    for (std::uint32_t i = 0; i < spec.m; ++i) {
      for (std::uint32_t j = 0; j < spec.n; ++j) call(cat.write, {fd(kFd), str("buf"), i64(spec.size)});
      call(cat.fsync, {fd(kFd)});
      iteration_done();
    }
  }

  void strided() {
    const std::int64_t base = rank * spec.chunk;
    const std::int64_t stride = std::int64_t{spec.ranks} * spec.chunk;
    for (std::uint32_t i = 0; i < spec.m; ++i) {
      call(cat.lseek, {fd(kFd), i64(base + i * stride), i64(0)});
      call(cat.write, {fd(kFd), str("buf"), i64(spec.chunk)});
      iteration_done();
    }
  }

  void ior_like() {
    call(cat.open, {str("/scratch/ior.dat"), i64(65), fd(kFd)});
    const std::int64_t per_block = spec.block / spec.transfer;
    for (std::uint32_t s = 0; s < spec.m; ++s) {
      const std::int64_t base = (std::int64_t{s} * spec.ranks + rank) * spec.block;
      for (std::int64_t k = 0; k < per_block; ++k) {
        call(cat.pwrite, {fd(kFd), str("buf"), i64(spec.transfer), i64(base + k * spec.transfer)});
      }
      iteration_done();
    }
    call(cat.close, {fd(kFd)});
  }

  void checkpoint_series() {
    const std::int64_t stride = std::int64_t{spec.ranks} * spec.chunk;
    for (std::uint32_t f = 0; f < spec.files; ++f) {
      for (std::uint32_t j = 0; j < spec.m; ++j) {
        if (j == 0) {
          if (f > 0) call(cat.close, {fd(kFd)});
          call(cat.open, {str("/scratch/plot-" + std::to_string(f)), i64(65), fd(kFd)});
        }
        for (std::int64_t w = 0; w < 2; ++w) {
          call(cat.pwrite, {fd(kFd), str("buf"), i64(spec.chunk), i64(rank * spec.chunk + (j * 2 + w) * stride)});
        }
        iteration_done();
      }
    }
    call(cat.close, {fd(kFd)});
  }

  void collective_agg() {
    const std::uint32_t k = (spec.ranks + spec.aggregators - 1) / spec.aggregators;
    const bool aggregator = rank % k == 0 && rank / k < spec.aggregators;
    const std::int64_t coalesced = std::int64_t{std::min(k, spec.ranks - rank)} * spec.chunk;
    const std::string path = "/scratch/agg.dat";

    auto open = t.begin_call(0, cat.mpi_open);
    if (aggregator) call(cat.open, {str(path), i64(65), fd(kFd)});
    t.end_call(open, {i64(0), str(path), i64(37), fd(100 + rank)});

    for (std::uint32_t i = 0; i < spec.m; ++i) {
      const std::int64_t off = (std::int64_t{i} * spec.ranks + rank) * spec.chunk;
      auto w = t.begin_call(0, cat.mpi_write_at_all);
      if (aggregator) {
        call(cat.pwrite, {fd(kFd), str("buf"), i64(coalesced), i64(off)});
      } else {
        call(cat.send_marker, {i64(spec.chunk)});
      }
      t.end_call(w, {fd(100 + rank), i64(off), str("buf"), i64(spec.chunk)});
      iteration_done();
    }

    auto close = t.begin_call(0, cat.mpi_close);
    if (aggregator) call(cat.close, {fd(kFd)});
    t.end_call(close, {fd(100 + rank)});
  }

  void random() {
    // Structure comes from the shared seed so ranks mostly agree; a per-rank
    // stream adds occasional divergence.
    std::mt19937_64 rng(spec.seed);
    std::mt19937_64 local(spec.seed * 1000003 + rank + 1);
    const std::uint32_t alphabet = std::min<std::uint32_t>(spec.alphabet, 10);
    static const std::vector<std::string> paths{"/scratch/a", "/scratch/b", "/tmp/c", "/home/d"};
    std::vector<std::int64_t> cursor(3), step(3);
    for (std::size_t s = 0; s < 3; ++s) {
      cursor[s] = static_cast<std::int64_t>(rank) * 4096;
      step[s] = 64 * static_cast<std::int64_t>(1 + rng() % 4);
    }
    auto next_offset = [&](std::size_t stream) {
      if (rng() % 9 == 0) step[stream] = static_cast<std::int64_t>(rng() % 512) - 128;
      if (local() % 23 == 0) cursor[stream] += static_cast<std::int64_t>(local() % 100000);
      auto v = cursor[stream];
      cursor[stream] += step[stream];
      return v;
    };
    auto pick_fd = [&] { return fd(kFd + static_cast<std::uint32_t>(rng() % 3)); };

    std::vector<std::uint32_t> history;
    auto emit = [&](std::uint32_t sym) {
      const std::uint32_t tid = spec.threads == 2 ? static_cast<std::uint32_t>(rng() % 2) : 0;
      switch (sym) {
        case 0: call(cat.write, {pick_fd(), str("buf"), i64(rng() % 2 ? 64 : 128)}, tid); break;
        case 1: call(cat.lseek, {pick_fd(), i64(next_offset(0)), i64(0)}, tid); break;
        case 2: call(cat.pwrite, {pick_fd(), str("buf"), i64(64), i64(next_offset(1))}, tid); break;
        case 3: call(cat.open, {str(paths[rng() % paths.size()]), i64(65), pick_fd()}, tid); break;
        case 4: call(cat.close, {pick_fd()}, tid); break;
        case 5: call(cat.fsync, {pick_fd()}, tid); break;
        case 6: {
          auto outer = t.begin_call(tid, cat.mpi_write_at);
          // With two threads the other one makes progress mid-call.
          if (spec.threads == 2) call(cat.fsync, {pick_fd()}, 1 - tid);
          auto off = next_offset(2);
          call(cat.pwrite, {pick_fd(), str("buf"), i64(64), i64(off)}, tid);
          t.end_call(outer, {fd(100), i64(off), str("buf"), i64(64)});
          break;
        }
        case 7: {
          auto h5 = t.begin_call(tid, cat.h5_write);
          auto mpi = t.begin_call(tid, cat.mpi_write_at);
          auto off = next_offset(2);
          call(cat.pwrite, {pick_fd(), str("buf"), i64(64), i64(off)}, tid);
          t.end_call(mpi, {fd(100), i64(off), str("buf"), i64(64)});
          t.end_call(h5, {i64(1), str("buf")});
          break;
        }
        case 8: call(cat.read, {pick_fd(), str("buf"), i64(64)}, tid); break;
        default: call(cat.pread, {pick_fd(), str("buf"), i64(64), i64(next_offset(1))}, tid); break;
      }
      if (rng() % 4 == 0) t.advance(static_cast<std::uint32_t>(rng() % 5));
      history.push_back(sym);
    };

    call(cat.mpi_open, {i64(0), str("/scratch/shared"), i64(37), fd(100)});
    while (history.size() < spec.length) {
      if (!history.empty() && rng() % 3 == 0) {
        // Repeat an earlier stretch so the grammar has structure to find.
        auto start = rng() % history.size();
        auto len = std::min<std::size_t>(1 + rng() % 12, history.size() - start);
        for (std::size_t i = 0; i < len && history.size() < spec.length; ++i) emit(history[start + i]);
      } else {
        auto sym = static_cast<std::uint32_t>(rng() % alphabet);
        if (local() % 50 == 0) sym = static_cast<std::uint32_t>(local() % alphabet);
        emit(sym);
      }
      if (history.size() % 10 == 0) iteration_done();
    }
  }
};

}  // namespace detail

inline const Catalog& catalog() {
  static const Catalog c;
  return c;
}

inline RunOutput run_workload(const WorkloadSpec& spec) {
  spec.validate();
  const auto& cat = catalog();
  HandleRegistry handles;
  if (spec.kind == WorkloadKind::CollectiveAgg || spec.kind == WorkloadKind::Random) {
    std::vector<HandleRegistry::Participant> group;
    for (std::uint32_t r = 0; r < spec.ranks; ++r) {
      group.push_back({r, LocalHandle{spec.kind == WorkloadKind::Random ? 100 : 100 + r}});
    }
    handles.collective_open(group);
  }

  TracerOptions opts;
  opts.intra_pattern = spec.intra_pattern;
  opts.filter = spec.filter;
  opts.retain_records = true;

  RunOutput out;
  std::vector<RankLocal> locals;
  for (std::uint32_t r = 0; r < spec.ranks; ++r) {
    RankTracer tracer(r, cat.registry, opts, &handles);
    detail::Driver d{cat, spec, tracer, r, r == 0 ? &out.table_growth : nullptr};
    switch (spec.kind) {
      case WorkloadKind::SerialNested: d.serial_nested(); break;
      case WorkloadKind::Strided: d.strided(); break;
      case WorkloadKind::IorLike: d.ior_like(); break;
      case WorkloadKind::CheckpointSeries: d.checkpoint_series(); break;
      case WorkloadKind::CollectiveAgg: d.collective_agg(); break;
      case WorkloadKind::Random: d.random(); break;
    }
    auto local = std::move(tracer).finalize();
    out.oracle.push_back(std::move(local.records));
    local.records.clear();
    locals.push_back(std::move(local));
  }
  out.result = finalize_trace(std::move(locals), FinalizeOptions{spec.inter_pattern});

  out.meta.functions = cat.registry.snapshot();
  out.meta.rank_count = spec.ranks;
  out.meta.filter = spec.filter;
  out.meta.intra_pattern = spec.intra_pattern;
  out.meta.inter_pattern = spec.inter_pattern;
  out.meta.extra["workload"] = to_json(spec).dump();
  return out;
}

/// Runs the workload and writes its archive to `dir`.
inline RunOutput generate(const WorkloadSpec& spec, const std::filesystem::path& dir) {
  auto out = run_workload(spec);
  write_archive(out.result, out.meta, dir);
  return out;
}

struct VerifyReport {
  bool ok = true;
  std::string message;
};

/// Compares every rank's decoded stream with an oracle, field by field.
inline VerifyReport compare_with_oracle(const TraceArchive& archive, const OracleLog& oracle) {
  if (oracle.size() != archive.rank_count()) {
    return {false, "rank count " + std::to_string(archive.rank_count()) + " != oracle " + std::to_string(oracle.size())};
  }
  for (std::uint32_t r = 0; r < archive.rank_count(); ++r) {
    auto records = archive.read_records(r);
    if (records.size() != oracle[r].size()) {
      return {false, "rank " + std::to_string(r) + ": " + std::to_string(records.size()) + " records, oracle has " +
                         std::to_string(oracle[r].size())};
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!(records[i] == oracle[r][i])) {
        return {false, "rank " + std::to_string(r) + " record " + std::to_string(i) + " differs"};
      }
    }
  }
  return {true, "ok"};
}

/// Re-runs the workload recorded in the archive metadata and compares.
inline VerifyReport verify_archive(const std::filesystem::path& dir) {
  auto archive = TraceArchive::open(dir);
  auto it = archive.meta().extra.find("workload");
  if (it == archive.meta().extra.end()) return {false, "archive carries no workload description"};
  WorkloadSpec spec;
  try {
    spec = workload_from_json(nlohmann::json::parse(it->second));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptArchiveError(files::kMeta, 0, std::string("bad workload: ") + e.what());
  }
  return compare_with_oracle(archive, run_workload(spec).oracle);
}

struct BenchRow {
  std::uint64_t scale_param = 0;
  std::uint64_t grammars_bytes = 0;
  std::uint64_t cst_bytes = 0;
  std::uint64_t index_bytes = 0;
  std::uint64_t timestamps_bytes = 0;
  std::uint64_t unique_grammars = 0;
  std::uint64_t cst_entries = 0;

  std::uint64_t core_bytes() const { return grammars_bytes + cst_bytes; }
};

enum class BenchAxis { Ranks, Iterations };

inline BenchRow measure(const WorkloadSpec& spec, std::uint64_t scale_param) {
  auto out = run_workload(spec);
  auto files = encode_archive(out.result, out.meta);
  return BenchRow{scale_param,
                  files.at(files::kGrammars).size(),
                  files.at(files::kCst).size(),
                  files.at(files::kIndex).size(),
                  files.at(files::kTimestamps).size(),
                  out.result.grammars.size(),
                  out.result.cst.size()};
}

inline std::vector<BenchRow> bench(WorkloadSpec spec, BenchAxis axis, const std::vector<std::uint32_t>& values) {
  std::vector<BenchRow> rows;
  for (auto v : values) {
    (axis == BenchAxis::Ranks ? spec.ranks : spec.m) = v;
    rows.push_back(measure(spec, v));
  }
  return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string s = "scale_param,grammars_bytes,cst_bytes,index_bytes,timestamps_bytes,unique_grammars,cst_entries\n";
  for (const auto& r : rows) {
    s += std::to_string(r.scale_param) + "," + std::to_string(r.grammars_bytes) + "," + std::to_string(r.cst_bytes) +
         "," + std::to_string(r.index_bytes) + "," + std::to_string(r.timestamps_bytes) + "," +
         std::to_string(r.unique_grammars) + "," + std::to_string(r.cst_entries) + "\n";
  }
  return s;
}

}  // namespace iotrace
