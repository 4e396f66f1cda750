// iotrace: generate, inspect, verify and convert compressed I/O trace archives.
//
// Exit codes: 0 success, 1 verification failure, 2 usage error,
// 3 corrupt archive.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "iotrace/convert.hpp"
#include "iotrace/harness.hpp"

namespace {

using namespace iotrace;

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kUsage = 2;
constexpr int kCorrupt = 3;

struct SpecFlags {
  std::string kind = "strided";
  std::string p = "1";
  std::string m = "1";
  WorkloadSpec spec;
  std::vector<std::string> prefixes;
  std::vector<std::string> layers;
  bool no_intra = false;
  bool no_inter = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--kind", kind, "serial_nested|strided|ior_like|checkpoint_series|collective_agg|random")
        ->capture_default_str();
    cmd->add_option("--p", p, "rank count (bench: range like 2..64)")->capture_default_str();
    cmd->add_option("--m", m, "iterations (bench: range like 1..1024)")->capture_default_str();
    cmd->add_option("--n", spec.n, "inner writes (serial_nested)")->capture_default_str();
    cmd->add_option("--size", spec.size, "write size (serial_nested)")->capture_default_str();
    cmd->add_option("--chunk", spec.chunk, "chunk size")->capture_default_str();
    cmd->add_option("--block", spec.block, "block size (ior_like)")->capture_default_str();
    cmd->add_option("--transfer", spec.transfer, "transfer size (ior_like)")->capture_default_str();
    cmd->add_option("--files", spec.files, "file count (checkpoint_series)")->capture_default_str();
    cmd->add_option("--aggregators", spec.aggregators, "aggregator count (collective_agg)")->capture_default_str();
    cmd->add_option("--seed", spec.seed, "seed (random)")->capture_default_str();
    cmd->add_option("--length", spec.length, "calls per rank (random)")->capture_default_str();
    cmd->add_option("--alphabet", spec.alphabet, "call templates in use (random)")->capture_default_str();
    cmd->add_option("--threads", spec.threads, "application threads per rank (random)")->capture_default_str();
    cmd->add_option("--filter-prefix", prefixes, "record only paths with this prefix (repeatable)");
    cmd->add_option("--enable-layer", layers, "record only these layers (repeatable)");
    cmd->add_flag("--no-intra-pattern", no_intra, "disable per-rank offset patterns");
    cmd->add_flag("--no-inter-pattern", no_inter, "disable cross-rank offset patterns");
  }

  WorkloadSpec build() const {
    WorkloadSpec s = spec;
    s.kind = parse_workload_kind(kind);
    s.ranks = single(p, "--p");
    s.m = single(m, "--m");
    s.intra_pattern = !no_intra;
    s.inter_pattern = !no_inter;
    if (!prefixes.empty() || !layers.empty()) {
      FilterConfig f;
      f.prefixes = prefixes;
      if (!layers.empty()) f.enabled_layers = std::set<std::string>(layers.begin(), layers.end());
      s.filter = std::move(f);
    }
    s.validate();
    return s;
  }

  static std::uint32_t single(const std::string& v, const char* flag) {
    auto values = parse_range(v);
    if (values.size() != 1) throw Error(Errc::InvalidArgument, std::string(flag) + " takes a single value here");
    return values.front();
  }

  /// "8", "2,4,8" or "2..64" (doubling).
  static std::vector<std::uint32_t> parse_range(const std::string& v) {
    auto number = [&](const std::string& s) {
      if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 9) {
        throw Error(Errc::InvalidArgument, "bad number '" + s + "'");
      }
      return static_cast<std::uint32_t>(std::stoul(s));
    };
    std::vector<std::uint32_t> out;
    if (auto dots = v.find(".."); dots != std::string::npos) {
      auto lo = number(v.substr(0, dots));
      auto hi = number(v.substr(dots + 2));
      if (lo == 0 || lo > hi) throw Error(Errc::InvalidArgument, "bad range '" + v + "'");
      for (std::uint64_t x = lo; x <= hi; x *= 2) out.push_back(static_cast<std::uint32_t>(x));
      return out;
    }
    std::size_t start = 0;
    while (start <= v.size()) {
      auto comma = v.find(',', start);
      out.push_back(number(v.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  }
};

std::unique_ptr<std::ostream> open_output(const std::string& path) {
  if (path.empty() || path == "-") return nullptr;
  auto f = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
  if (!*f) throw Error(Errc::IoFailure, "cannot open " + path);
  return f;
}

void dump(const TraceArchive& archive, std::optional<std::uint32_t> only_rank, std::ostream& out) {
  for (std::uint32_t r = 0; r < archive.rank_count(); ++r) {
    if (only_rank && *only_rank != r) continue;
    out << "# rank " << r << " (grammar " << archive.result().cfg_index[r] << ")\n";
    for (const auto& rec : archive.read_records(r)) {
      out << rec.t_entry << '-' << rec.t_exit << " tid=" << rec.thread_id << ' '
          << std::string(2 * rec.call_depth, ' ') << archive.registry().info(rec.func).name << '(';
      for (std::size_t i = 0; i < rec.args.size(); ++i) out << (i ? ", " : "") << format_arg(rec.args[i]);
      out << ")\n";
    }
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Compressed I/O trace archives: generate, verify, inspect, convert"};
  app.require_subcommand(1);

  SpecFlags gen_flags;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen", "run a workload and write its archive");
  gen_flags.attach(gen);
  gen->add_option("-o,--output", gen_out, "archive directory")->required();

  std::string archive_dir;
  auto* verify = app.add_subcommand("verify", "re-run the recorded workload and compare every record");
  verify->add_option("archive", archive_dir)->required();

  std::optional<std::uint32_t> dump_rank;
  auto* dump_cmd = app.add_subcommand("dump", "print decoded records");
  dump_cmd->add_option("archive", archive_dir)->required();
  dump_cmd->add_option("--rank", dump_rank, "only this rank");

  std::string format, convert_out;
  auto* convert = app.add_subcommand("convert", "export to chrome trace JSON or CSV");
  convert->add_option("archive", archive_dir)->required();
  convert->add_option("--format", format)->required()->check(CLI::IsMember({"chrome", "csv"}));
  convert->add_option("-o,--output", convert_out, "output file (default stdout)");

  bool as_json = false;
  auto* stats_cmd = app.add_subcommand("stats", "per-function counts and file sizes");
  stats_cmd->add_option("archive", archive_dir)->required();
  stats_cmd->add_flag("--json", as_json, "machine-readable output");

  SpecFlags bench_flags;
  std::string bench_out;
  auto* bench_cmd = app.add_subcommand("bench", "archive size over a range of --p or --m, as CSV");
  bench_flags.attach(bench_cmd);
  bench_cmd->add_option("-o,--output", bench_out, "CSV file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      auto out = generate(gen_flags.build(), gen_out);
      std::size_t records = 0;
      for (const auto& r : out.oracle) records += r.size();
      std::cout << "wrote " << gen_out << ": " << out.result.rank_count() << " ranks, " << records << " records, "
                << out.result.grammars.size() << " unique grammars\n";
    } else if (*verify) {
      auto rep = verify_archive(archive_dir);
      std::cout << (rep.ok ? "PASS " : "FAIL ") << rep.message << "\n";
      return rep.ok ? kOk : kVerifyFailed;
    } else if (*dump_cmd) {
      dump(TraceArchive::open(archive_dir), dump_rank, std::cout);
    } else if (*convert) {
      auto archive = TraceArchive::open(archive_dir);
      auto file = open_output(convert_out);
      std::ostream& out = file ? *file : std::cout;
      if (format == "chrome") {
        to_chrome_timeline(archive, out);
        out << "\n";
      } else {
        to_columnar(archive, out);
      }
    } else if (*stats_cmd) {
      auto rep = stats(TraceArchive::open(archive_dir));
      std::cout << (as_json ? rep.to_json().dump(2) + "\n" : rep.to_text());
    } else if (*bench_cmd) {
      auto ps = SpecFlags::parse_range(bench_flags.p);
      auto ms = SpecFlags::parse_range(bench_flags.m);
      if (ps.size() > 1 && ms.size() > 1) throw Error(Errc::InvalidArgument, "sweep either --p or --m, not both");
      auto axis = ms.size() > 1 ? BenchAxis::Iterations : BenchAxis::Ranks;
      auto base = bench_flags;
      base.p = std::to_string(ps.front());
      base.m = std::to_string(ms.front());
      auto rows = bench(base.build(), axis, axis == BenchAxis::Ranks ? ps : ms);
      auto file = open_output(bench_out);
      (file ? *file : std::cout) << bench_csv(rows);
    }
  } catch (const CorruptArchiveError& e) {
    std::cerr << "corrupt archive: " << e.what() << "\n";
    return kCorrupt;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return e.code() == Errc::InvalidArgument ? kUsage : kVerifyFailed;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
