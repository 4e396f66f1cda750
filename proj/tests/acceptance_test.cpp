// Acceptance suite. Prints one PASS/FAIL line per criterion.
//
// The exit code is zero when every criterion passes, except those listed in
// kKnownFailures: that one cannot hold as stated (see the message it
// prints) and still reports FAIL.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "iotrace/archive.hpp"
#include "iotrace/convert.hpp"
#include "iotrace/harness.hpp"

namespace {

using namespace iotrace;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

const std::set<int> kKnownFailures{10};

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path scratch_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("iotrace_accept_" + std::to_string(::getpid()) + "_" + tag);
  fs::remove_all(p);
  return p;
}

WorkloadSpec make(WorkloadKind kind, std::uint32_t ranks, std::uint32_t m) {
  WorkloadSpec s;
  s.kind = kind;
  s.ranks = ranks;
  s.m = m;
  return s;
}

std::uint64_t core_bytes(const RunOutput& out) {
  auto files = encode_archive(out.result, out.meta);
  return files.at(files::kGrammars).size() + files.at(files::kCst).size();
}

// 1. Nested loops compress to S -> A^m, A -> a^n b with a two-entry table,
//    and the grammar does not grow with m or n.
Outcome nested_loops() {
  auto t0 = Clock::now();
  auto s = make(WorkloadKind::SerialNested, 1, 3);
  s.n = 4;
  auto out = run_workload(s);
  Grammar expected(Grammar::RuleMap{{kStartRule, {{-2, 3}}}, {-2, {{0, 4}, {1, 1}}}});
  if (out.result.grammars.size() != 1 || out.result.grammars[0].expand() != expected.expand()) {
    return {false, "m=3,n=4 grammar does not expand like S->A^3, A->a^4 b"};
  }
  if (out.result.cst.size() != 2) return {false, "m=3,n=4 table has " + std::to_string(out.result.cst.size()) + " entries"};
  std::set<std::pair<std::size_t, std::size_t>> shapes;
  for (std::uint32_t m = 2; m <= 50; ++m) {
    for (std::uint32_t n = 2; n <= 50; ++n) {
      auto v = make(WorkloadKind::SerialNested, 1, m);
      v.n = n;
      auto o = run_workload(v);
      shapes.insert({o.result.grammars[0].rule_count(), o.result.cst.size()});
    }
  }
  double secs = seconds_since(t0);
  if (shapes.size() != 1) return {false, std::to_string(shapes.size()) + " distinct (rules, entries) shapes over m,n"};
  bool fast = secs < 1.0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "rules=%zu entries=%zu for all m,n in 2..50; %.2fs (limit 1s)", shapes.begin()->first,
                shapes.begin()->second, secs);
  return {fast, buf};
}

// 2. Two ranks writing a shared file converge on one grammar.
Outcome shared_file_pipeline() {
  const std::uint32_t P = 2, m = 2;
  const std::int64_t chunk = 10;
  auto s = make(WorkloadKind::Strided, P, m);
  s.chunk = chunk;
  auto dir = scratch_dir("c2");
  auto out = generate(s, dir);
  if (out.result.grammars.size() != 1) return {false, std::to_string(out.result.grammars.size()) + " unique grammars"};
  if (out.result.cfg_index != std::vector<std::uint32_t>{0, 0}) return {false, "index is not [0,0]"};

  // Per-rank tables after the rank-linear rewrite, rebuilt directly.
  const auto& cat = catalog();
  std::vector<SignatureTable> tables;
  for (std::uint32_t r = 0; r < P; ++r) {
    RankTracer t(r, cat.registry);
    for (std::uint32_t i = 0; i < m; ++i) {
      t.trace_call(0, cat.lseek, {LocalHandle{3}, r * chunk + i * P * chunk, std::int64_t{0}});
      t.trace_call(0, cat.write, {LocalHandle{3}, std::string("buf"), chunk});
    }
    tables.push_back(t.finalize().table);
  }
  tables = finalize_patterns(std::move(tables));
  if (!(tables[0] == tables[1])) return {false, "rewritten tables differ between ranks"};

  std::vector<std::int64_t> expected, got;
  for (std::uint32_t i = 0; i < m; ++i) expected.push_back(1 * chunk + i * P * chunk);
  for (const auto& rec : TraceArchive::open(dir).read_records(1)) {
    if (rec.func == cat.lseek) got.push_back(std::get<std::int64_t>(rec.args[1]));
  }
  fs::remove_all(dir);
  if (got != expected) return {false, "rank 1 offsets differ from 10,30"};
  return {true, "1 grammar, index [0,0], identical tables, rank 1 offsets {10,30}"};
}

const std::vector<std::uint32_t> kSweep{2, 4, 8, 16, 32, 64};

// 3. Core size independent of P.
Outcome scale_invariance() {
  auto t0 = Clock::now();
  std::set<std::uint64_t> sizes;
  std::string list;
  for (auto p : kSweep) {
    auto b = core_bytes(run_workload(make(WorkloadKind::Strided, p, 1000)));
    sizes.insert(b);
    list += (list.empty() ? "" : ",") + std::to_string(b);
  }
  double secs = seconds_since(t0);
  char buf[200];
  std::snprintf(buf, sizeof buf, "core bytes for P=2..64: %s; %.2fs (limit 30s)", list.c_str(), secs);
  return {sizes.size() == 1 && secs < 30.0, buf};
}

// 4. Without the cross-rank rewrite the core grows with P.
Outcome inter_ablation() {
  std::vector<std::uint64_t> sizes;
  for (auto p : kSweep) {
    auto s = make(WorkloadKind::Strided, p, 1000);
    s.inter_pattern = false;
    sizes.push_back(core_bytes(run_workload(s)));
  }
  bool increasing = std::adjacent_find(sizes.begin(), sizes.end(), std::greater_equal<>()) == sizes.end();
  double growth = static_cast<double>(sizes.back() - sizes.front()) / static_cast<double>(sizes.front());
  char buf[160];
  std::snprintf(buf, sizeof buf, "P=2 %llu bytes, P=64 %llu bytes, relative growth %.1f (need >= 10), %s",
                static_cast<unsigned long long>(sizes.front()), static_cast<unsigned long long>(sizes.back()), growth,
                increasing ? "strictly increasing" : "NOT strictly increasing");
  return {increasing && growth >= 10.0, buf};
}

// 5. Without per-rank patterns every offset is its own signature.
Outcome intra_ablation() {
  std::set<std::size_t> with_patterns;
  for (std::uint32_t m : {2u, 10u, 100u}) {
    auto off = make(WorkloadKind::Strided, 1, m);
    off.intra_pattern = false;
    auto o = run_workload(off);
    if (o.result.cst.size() != m + 1) {
      return {false, "m=" + std::to_string(m) + ": " + std::to_string(o.result.cst.size()) + " entries, expected m+1"};
    }
    if (o.result.grammars[0].expanded_length() != 2ull * m) return {false, "m=" + std::to_string(m) + ": length != 2m"};
    auto on = run_workload(make(WorkloadKind::Strided, 1, m));
    if (on.result.cst.size() > 4) return {false, "pattern table exceeds 4 entries"};
    with_patterns.insert(on.result.cst.size());
  }
  if (with_patterns.size() != 1) return {false, "pattern table size depends on m"};
  return {true, "off: m+1 entries and 2m calls; on: " + std::to_string(*with_patterns.begin()) + " entries for every m"};
}

// 6. A new file name brings new signatures only at its first iteration.
Outcome filename_staircase() {
  const std::uint32_t files = 5, iters = 10;
  auto s = make(WorkloadKind::CheckpointSeries, 4, iters);
  s.files = files;
  auto out = run_workload(s);
  const auto& g = out.table_growth;
  if (g.size() != files * iters) return {false, "unexpected iteration count"};
  std::string steps;
  for (std::size_t it = 1; it < g.size(); ++it) {
    bool first_of_file = it % iters == 0;
    if (first_of_file && g[it] <= g[it - 1]) return {false, "no growth at iteration " + std::to_string(it)};
    if (!first_of_file && g[it] != g[it - 1]) return {false, "growth inside a file at iteration " + std::to_string(it)};
  }
  for (std::size_t f = 0; f < files; ++f) steps += (f ? "," : "") + std::to_string(g[f * iters]);
  return {true, "table size per file: " + steps};
}

// 7. Every generator round-trips through the archive, field for field.
Outcome losslessness() {
  auto t0 = Clock::now();
  auto dir = scratch_dir("c7");
  std::size_t runs = 0;
  auto check = [&](const WorkloadSpec& s) -> std::string {
    auto out = generate(s, dir);
    auto rep = compare_with_oracle(TraceArchive::open(dir), out.oracle);
    ++runs;
    return rep.ok ? "" : to_string(s.kind) + " P=" + std::to_string(s.ranks) + " m=" + std::to_string(s.m) + ": " + rep.message;
  };
  for (auto kind : {WorkloadKind::SerialNested, WorkloadKind::Strided, WorkloadKind::IorLike,
                    WorkloadKind::CheckpointSeries, WorkloadKind::CollectiveAgg}) {
    for (std::uint32_t p : {1u, 2u, 4u, 8u, 16u, 32u, 64u}) {
      if (kind == WorkloadKind::SerialNested && p > 1) continue;
      for (std::uint32_t m : {1u, 2u, 10u, 100u}) {
        auto s = make(kind, p, m);
        s.n = 3;
        s.files = 3;
        s.aggregators = std::min(4u, p);
        if (auto err = check(s); !err.empty()) return {false, err};
      }
    }
  }
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto s = make(WorkloadKind::Random, 1 + seed % 4, 1);
    s.seed = seed;
    s.length = 50 + static_cast<std::uint32_t>(seed % 7) * 40;
    s.alphabet = 1 + seed % 10;
    s.threads = 1 + seed % 2;
    s.intra_pattern = seed % 5 != 1;
    s.inter_pattern = seed % 3 != 2;
    if (seed % 4 == 3) s.filter = FilterConfig{{"/scratch"}, std::nullopt};
    if (auto err = check(s); !err.empty()) return {false, "seed " + std::to_string(seed) + ": " + err};
  }
  fs::remove_all(dir);
  double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu archives equal their oracles; %.2fs (limit 60s)", runs, secs);
  return {secs < 60.0, buf};
}

// 8. Grammar construction time grows linearly.
Outcome sequitur_linearity() {
  const std::size_t n = 1'000'000;
  std::mt19937 rng(2024);
  std::vector<std::uint32_t> seq;
  seq.reserve(2 * n);
  while (seq.size() < 2 * n) {
    if (seq.size() > 64 && rng() % 3 == 0) {
      auto start = rng() % (seq.size() - 32);
      auto len = 2 + rng() % 30;
      for (std::size_t k = 0; k < len && seq.size() < 2 * n; ++k) seq.push_back(seq[start + k]);
    } else {
      seq.push_back(rng() % 16);
    }
  }
  auto time_append = [&](std::size_t count) {
    SequiturBuilder b;
    auto t0 = Clock::now();
    for (std::size_t i = 0; i < count; ++i) b.append(seq[i]);
    return seconds_since(t0);
  };
  // One warm-up pair, then the two sizes alternate so load drift hits both.
  time_append(n);
  time_append(2 * n);
  std::vector<double> single, twice;
  for (int rep = 0; rep < 5; ++rep) {
    single.push_back(time_append(n));
    twice.push_back(time_append(2 * n));
  }
  std::sort(single.begin(), single.end());
  std::sort(twice.begin(), twice.end());
  double t1 = single[2], t2 = twice[2];
  double ratio = t2 / t1;
  char buf[160];
  std::snprintf(buf, sizeof buf, "median %.3fs for 1e6, %.3fs for 2e6, ratio %.2f (limit 2.5)", t1, t2, ratio);
  return {ratio <= 2.5, buf};
}

// 9. Four bytes per timestamp before deflate, lossless after.
Outcome timestamp_contract() {
  for (auto kind : {WorkloadKind::Strided, WorkloadKind::CollectiveAgg, WorkloadKind::Random}) {
    auto s = make(kind, 4, 20);
    s.aggregators = 2;
    s.threads = 2;
    auto out = run_workload(s);
    for (std::uint32_t r = 0; r < s.ranks; ++r) {
      const auto calls = out.oracle[r].size();
      auto log = unpack_timestamps(out.result.timestamps[r], out.result.call_counts[r]);
      if (raw_timestamp_block(log).size() != 8 * calls) return {false, "raw block size != 8 x calls"};
      for (std::size_t i = 0; i < calls; ++i) {
        if (log[i].entry != out.oracle[r][i].t_entry || log[i].exit != out.oracle[r][i].t_exit) {
          return {false, "unpacked timestamps differ from recorded ones"};
        }
      }
    }
  }
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<TimestampPair> log(rng() % 2000);
    for (auto& p : log) {
      p.entry = static_cast<std::uint32_t>(rng());
      p.exit = p.entry + static_cast<std::uint32_t>(rng() % 1000);
    }
    if (raw_timestamp_block(log).size() != 8 * log.size()) return {false, "raw block size != 8 x pairs"};
    if (unpack_timestamps(pack_timestamps(log), log.size()) != log) return {false, "random log does not round-trip"};
  }
  return {true, "raw block = 8 bytes per call; 500 random logs round-trip"};
}

// 10. Unique grammar count stops growing with P once aggregators are fixed.
Outcome aggregator_plateau() {
  std::vector<std::size_t> counts;
  std::string list;
  for (std::uint32_t p : {8u, 16u, 32u, 64u}) {
    auto s = make(WorkloadKind::CollectiveAgg, p, 10);
    s.aggregators = 8;
    counts.push_back(run_workload(s).result.grammars.size());
    list += (list.empty() ? "" : ", ") + ("P=" + std::to_string(p) + ":" + std::to_string(counts.back()));
  }
  bool all_equal = std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) == counts.end();
  bool plateau_after_first = std::adjacent_find(counts.begin() + 1, counts.end(), std::not_equal_to<>()) == counts.end();
  std::string detail = "unique grammars " + list;
  if (!all_equal && plateau_after_first) {
    detail += " -- at P=8 every rank aggregates, so no non-aggregator grammar exists; constant from P=16 on";
  }
  return {all_equal, detail};
}

// 11. Single-byte corruption is always reported, never decoded wrongly.
Outcome robustness() {
  auto base = scratch_dir("c11_base");
  auto work = scratch_dir("c11_work");
  auto s = make(WorkloadKind::Random, 3, 1);
  s.seed = 11;
  s.length = 300;
  s.alphabet = 10;
  s.threads = 2;
  auto out = generate(s, base);

  std::vector<std::pair<std::string, std::string>> originals;
  for (const auto* name : {files::kGrammars, files::kCst, files::kIndex, files::kTimestamps, files::kMeta}) {
    std::ifstream in(base / name, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    originals.emplace_back(name, ss.str());
  }
  fs::create_directories(work);
  auto write_all = [&] {
    for (const auto& [name, bytes] : originals) std::ofstream(work / name, std::ios::binary) << bytes;
  };
  write_all();

  std::mt19937_64 rng(1234);
  std::size_t detected = 0, clean = 0, wrong = 0, other = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto& [name, bytes] = originals[rng() % originals.size()];
    auto pos = rng() % bytes.size();
    auto bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ static_cast<char>(1 + rng() % 255));
    std::ofstream(work / name, std::ios::binary) << bad;
    try {
      auto archive = TraceArchive::open(work);
      auto rep = compare_with_oracle(archive, out.oracle);
      std::ostringstream sink;
      to_chrome_timeline(archive, sink);
      rep.ok ? ++clean : ++wrong;
    } catch (const CorruptArchiveError&) {
      ++detected;
    } catch (const std::exception&) {
      ++other;
    }
    std::ofstream(work / name, std::ios::binary) << bytes;
  }
  fs::remove_all(base);
  fs::remove_all(work);
  char buf[200];
  std::snprintf(buf, sizeof buf, "1000 flips: %zu reported as CorruptArchive, %zu decoded correctly, %zu wrong, %zu other errors",
                detected, clean, wrong, other);
  return {wrong == 0 && other == 0, buf};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"nested-loop grammar", nested_loops},
      {"shared-file pipeline", shared_file_pipeline},
      {"scale invariance", scale_invariance},
      {"ablation, cross-rank patterns off", inter_ablation},
      {"ablation, per-rank patterns off", intra_ablation},
      {"filename staircase", filename_staircase},
      {"losslessness", losslessness},
      {"grammar construction linearity", sequitur_linearity},
      {"timestamp contract", timestamp_contract},
      {"aggregator plateau", aggregator_plateau},
      {"corruption robustness", robustness},
  };
  int passed = 0, unexpected = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool known = kKnownFailures.contains(id);
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << " (" << criteria[i].first << "): " << o.detail
              << (!o.pass && known ? "  [known failure]" : "") << std::endl;
    if (o.pass) {
      ++passed;
    } else if (!known) {
      ++unexpected;
    }
  }
  std::cout << passed << "/" << criteria.size() << " criteria pass";
  if (unexpected == 0 && passed < static_cast<int>(criteria.size())) std::cout << "; remaining failures are known";
  std::cout << std::endl;
  return unexpected == 0 ? 0 : 1;
}
