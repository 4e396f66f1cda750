#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "iotrace/convert.hpp"
#include "iotrace/harness.hpp"

namespace iotrace {
namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("iotrace_archive_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

WorkloadSpec serial(std::uint32_t m, std::uint32_t n) {
  WorkloadSpec s;
  s.kind = WorkloadKind::SerialNested;
  s.m = m;
  s.n = n;
  return s;
}

WorkloadSpec strided(std::uint32_t p, std::uint32_t m, std::int64_t chunk) {
  WorkloadSpec s;
  s.kind = WorkloadKind::Strided;
  s.ranks = p;
  s.m = m;
  s.chunk = chunk;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Archive, RoundTripPreservesMergeResultAndMeta) {
  TempDir dir;
  auto out = generate(strided(4, 20, 16), dir.path);
  auto archive = TraceArchive::open(dir.path);
  EXPECT_EQ(archive.result(), out.result);
  EXPECT_EQ(archive.meta(), out.meta);
  for (const auto* name : {files::kGrammars, files::kCst, files::kIndex, files::kTimestamps, files::kMeta}) {
    EXPECT_TRUE(fs::exists(dir.path / name)) << name;
    EXPECT_EQ(archive.file_sizes().at(name), fs::file_size(dir.path / name));
  }
  EXPECT_EQ(slurp(dir.path / files::kCst).substr(0, 4), "RCTG");
}

TEST(Archive, WritingTwiceIsByteIdentical) {
  TempDir a, b;
  generate(strided(3, 10, 8), a.path);
  generate(strided(3, 10, 8), b.path);
  for (const auto& entry : fs::directory_iterator(a.path)) {
    EXPECT_EQ(slurp(entry.path()), slurp(b.path / entry.path().filename())) << entry.path();
  }
}

TEST(Archive, MetaIsSortedKeyValueLines) {
  auto out = run_workload(strided(2, 2, 10));
  auto text = serialize_meta(out.meta);
  std::istringstream in(text);
  std::string line, prev;
  while (std::getline(in, line)) {
    auto key = line.substr(0, line.find('='));
    EXPECT_LT(prev, key);
    prev = key;
  }
  EXPECT_NE(text.find("time_resolution=1e-07\n"), std::string::npos);
  EXPECT_EQ(parse_meta(text), out.meta);
}

TEST(Archive, NestedLoopDecodesToFifteenRecords) {
  TempDir dir;
  generate(serial(3, 4), dir.path);
  auto archive = TraceArchive::open(dir.path);
  auto recs = archive.read_records(0);
  ASSERT_EQ(recs.size(), 15u);
  const auto& cat = catalog();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].func, (i % 5 == 4) ? cat.fsync : cat.write);
  }
}

TEST(Archive, RankOneOffsetsOfSharedFile) {
  TempDir dir;
  generate(strided(2, 2, 10), dir.path);
  auto archive = TraceArchive::open(dir.path);
  std::vector<std::int64_t> offsets;
  for (const auto& r : archive.read_records(1)) {
    if (r.func == catalog().lseek) offsets.push_back(std::get<std::int64_t>(r.args[1]));
  }
  EXPECT_EQ(offsets, (std::vector<std::int64_t>{10, 30}));
}

TEST(Archive, EmptySession) {
  TempDir dir;
  auto out = run_workload(serial(1, 1));
  RankTracer t(0, catalog().registry);
  std::vector<RankLocal> locals{t.finalize()};
  auto result = finalize_trace(std::move(locals));
  out.meta.extra.clear();
  write_archive(result, out.meta, dir.path);
  auto archive = TraceArchive::open(dir.path);
  EXPECT_TRUE(archive.read_records(0).empty());
  std::ostringstream chrome;
  to_chrome_timeline(archive, chrome);
  EXPECT_EQ(chrome.str(), "[]");
}

TEST(Archive, MissingFileIsCorrupt) {
  TempDir dir;
  generate(serial(2, 2), dir.path);
  fs::remove(dir.path / files::kIndex);
  try {
    TraceArchive::open(dir.path);
    FAIL();
  } catch (const CorruptArchiveError& e) {
    EXPECT_EQ(e.file(), files::kIndex);
  }
}

TEST(Archive, HeaderCorruptionIsLocated) {
  TempDir dir;
  generate(strided(2, 5, 10), dir.path);
  for (const auto* name : {files::kGrammars, files::kCst, files::kIndex, files::kTimestamps}) {
    for (std::size_t pos : {0u, 5u, 9u, 17u}) {
      auto path = dir.path / name;
      auto original = slurp(path);
      auto bad = original;
      bad[pos] ^= 0x40;
      std::ofstream(path, std::ios::binary) << bad;
      try {
        TraceArchive::open(dir.path);
        ADD_FAILURE() << name << " @" << pos;
      } catch (const CorruptArchiveError& e) {
        EXPECT_EQ(e.file(), name);
      }
      std::ofstream(path, std::ios::binary) << original;
    }
  }
}

TEST(Archive, TruncatedFilesAreCorrupt) {
  TempDir dir;
  generate(strided(2, 5, 10), dir.path);
  for (const auto& entry : fs::directory_iterator(dir.path)) {
    auto original = slurp(entry.path());
    for (std::size_t keep : {std::size_t{0}, std::size_t{3}, original.size() / 2, original.size() - 1}) {
      std::ofstream(entry.path(), std::ios::binary) << original.substr(0, keep);
      EXPECT_THROW(TraceArchive::open(dir.path), CorruptArchiveError) << entry.path() << " " << keep;
    }
    std::ofstream(entry.path(), std::ios::binary) << original;
  }
}

TEST(Chrome, UnitConversionAndShape) {
  TempDir dir;
  WorkloadSpec s = serial(1, 1);
  auto out = generate(s, dir.path);
  auto archive = TraceArchive::open(dir.path);
  std::ostringstream ss;
  to_chrome_timeline(archive, ss);
  auto j = nlohmann::json::parse(ss.str());
  ASSERT_EQ(j.size(), 2u);
  // Default clock: first call spans ticks 0..1, second starts at 2.
  EXPECT_DOUBLE_EQ(j[0]["ts"].get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(j[0]["dur"].get<double>(), 0.1);
  EXPECT_DOUBLE_EQ(j[1]["ts"].get<double>(), 0.2);
  for (const auto& e : j) {
    EXPECT_EQ(e["ph"], "X");
    for (const auto* key : {"name", "cat", "ts", "dur", "pid", "tid", "args"}) EXPECT_TRUE(e.contains(key)) << key;
    EXPECT_TRUE(e["args"].contains("call_depth"));
  }
  EXPECT_EQ(j[0]["name"], "write");
  EXPECT_EQ(j[0]["cat"], "posix");
  EXPECT_EQ(j[0]["args"]["arg2"], 64);
}

TEST(Chrome, EventCountMatchesRecords) {
  TempDir dir;
  auto out = generate(strided(3, 7, 10), dir.path);
  auto archive = TraceArchive::open(dir.path);
  std::ostringstream ss;
  to_chrome_timeline(archive, ss);
  EXPECT_EQ(nlohmann::json::parse(ss.str()).size(), 3u * 7 * 2);
}

// Minimal RFC 4180 reader for the round-trip check.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows(1, std::vector<std::string>(1));
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        rows.back().back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        rows.back().back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      rows.back().emplace_back();
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      ++i;
      rows.emplace_back(1);
    } else {
      rows.back().back() += c;
    }
  }
  if (rows.back().size() == 1 && rows.back()[0].empty()) rows.pop_back();
  return rows;
}

TEST(Columnar, RowsReproduceRecords) {
  TempDir dir;
  WorkloadSpec s;
  s.kind = WorkloadKind::Random;
  s.seed = 3;
  s.ranks = 2;
  s.length = 80;
  s.alphabet = 10;
  s.threads = 2;
  generate(s, dir.path);
  auto archive = TraceArchive::open(dir.path);
  std::ostringstream ss;
  to_columnar(archive, ss);
  auto rows = parse_csv(ss.str());
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows[0][0], "rank");
  EXPECT_EQ(rows[0][6], "arg1");
  std::size_t row = 1;
  for (std::uint32_t r = 0; r < archive.rank_count(); ++r) {
    for (const auto& rec : archive.read_records(r)) {
      ASSERT_LT(row, rows.size());
      const auto& cells = rows[row++];
      EXPECT_EQ(cells[0], std::to_string(r));
      EXPECT_EQ(cells[1], std::to_string(rec.thread_id));
      EXPECT_EQ(cells[2], std::to_string(rec.call_depth));
      EXPECT_EQ(cells[3], archive.registry().info(rec.func).name);
      EXPECT_EQ(cells[4], std::to_string(rec.t_entry));
      EXPECT_EQ(cells[5], std::to_string(rec.t_exit));
      for (std::size_t a = 0; a < rec.args.size(); ++a) EXPECT_EQ(cells[6 + a], format_arg(rec.args[a]));
    }
  }
  EXPECT_EQ(row, rows.size());
}

TEST(Columnar, SharedFileRowCount) {
  TempDir dir;
  generate(strided(2, 2, 10), dir.path);
  std::ostringstream ss;
  to_columnar(TraceArchive::open(dir.path), ss);
  EXPECT_EQ(parse_csv(ss.str()).size(), 1u + 8);
}

TEST(Columnar, QuotesSpecialCharacters) {
  EXPECT_EQ(detail::csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(detail::csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(detail::csv_field("plain"), "plain");
}

TEST(Stats, NestedLoopCounts) {
  TempDir dir;
  generate(serial(3, 4), dir.path);
  auto rep = stats(TraceArchive::open(dir.path));
  EXPECT_EQ(rep.calls.at("write"), 12u);
  EXPECT_EQ(rep.calls.at("fsync"), 3u);
  EXPECT_EQ(rep.total_records, 15u);
  EXPECT_EQ(rep.unique_grammars, 1u);
}

TEST(Stats, FourRanksShareOneGrammar) {
  TempDir dir;
  generate(strided(4, 10, 10), dir.path);
  auto archive = TraceArchive::open(dir.path);
  auto rep = stats(archive);
  EXPECT_EQ(rep.unique_grammars, 1u);
  std::uint64_t sum = 0;
  for (const auto& [name, n] : rep.unique_signatures) sum += n;
  EXPECT_EQ(sum, rep.cst_entries);
  for (const auto& [name, size] : rep.file_sizes) EXPECT_EQ(size, fs::file_size(dir.path / name));
  EXPECT_NO_THROW(nlohmann::json::parse(rep.to_json().dump()));
}

}  // namespace
}  // namespace iotrace
