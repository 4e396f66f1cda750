// Traces a small strided write loop on two simulated ranks, compresses it,
// writes an archive and prints the decoded stream of rank 1.

#include <filesystem>
#include <iostream>

#include "iotrace/archive.hpp"
#include "iotrace/finalize.hpp"
#include "iotrace/session.hpp"

int main(int argc, char** argv) {
  using namespace iotrace;
  const std::filesystem::path out = argc > 1 ? argv[1] : "sample_trace";

  FunctionRegistry registry;
  auto lseek = registry.register_function("lseek", 3, {1});
  auto write = registry.register_function("write", 3, {});

  const std::uint32_t ranks = 2;
  const std::int64_t chunk = 4096;
  std::vector<RankLocal> locals;
  for (std::uint32_t r = 0; r < ranks; ++r) {
    RankTracer tracer(r, registry);
    for (std::int64_t i = 0; i < 100; ++i) {
      tracer.trace_call(0, lseek, {LocalHandle{3}, r * chunk + i * ranks * chunk, std::int64_t{0}});
      tracer.trace_call(0, write, {LocalHandle{3}, std::string("buf"), chunk});
    }
    locals.push_back(tracer.finalize());
  }

  auto result = finalize_trace(std::move(locals));
  ArchiveMeta meta;
  meta.functions = registry.snapshot();
  meta.rank_count = ranks;
  write_archive(result, meta, out);

  auto archive = TraceArchive::open(out);
  std::cout << "unique grammars: " << archive.result().grammars.size()
            << ", signatures: " << archive.result().cst.size() << "\n";
  auto records = archive.read_records(1);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& rec = records[i];
    std::cout << registry.info(rec.func).name << "(";
    for (std::size_t a = 0; a < rec.args.size(); ++a) std::cout << (a ? ", " : "") << format_arg(rec.args[a]);
    std::cout << ")\n";
  }
  std::cout << "... " << records.size() << " records on rank 1\n";
}
