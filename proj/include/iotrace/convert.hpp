#pragma once

// Converters from a trace archive to external formats, and a summary report.

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "iotrace/archive.hpp"
#include "iotrace/model.hpp"

namespace iotrace {

namespace detail {

inline nlohmann::ordered_json arg_json(const ArgValue& arg) {
  if (const auto* v = std::get_if<std::int64_t>(&arg)) return *v;
  return format_arg(arg);
}

}  // namespace detail

/// Chrome trace-event JSON: one complete ("X") event per call, ordered by
/// rank, then stream order. Times are microseconds.
inline void to_chrome_timeline(const TraceArchive& archive, std::ostream& out) {
  const double us_per_tick = archive.meta().time_resolution * 1e6;
  auto events = nlohmann::ordered_json::array();
  for (std::uint32_t r = 0; r < archive.rank_count(); ++r) {
    for (const auto& rec : archive.read_records(r)) {
      const auto& info = archive.registry().info(rec.func);
      nlohmann::ordered_json args = nlohmann::ordered_json::object();
      for (std::size_t i = 0; i < rec.args.size(); ++i) args["arg" + std::to_string(i)] = detail::arg_json(rec.args[i]);
      args["call_depth"] = rec.call_depth;
      events.push_back({{"name", info.name},
                        {"cat", info.layer},
                        {"ph", "X"},
                        {"ts", rec.t_entry * us_per_tick},
                        {"dur", (rec.t_exit - rec.t_entry) * us_per_tick},
                        {"pid", r},
                        {"tid", rec.thread_id},
                        {"args", std::move(args)}});
    }
  }
  out << events.dump();
}

namespace detail {

inline std::string csv_field(const std::string& v) {
  if (v.find_first_of(",\"\r\n") == std::string::npos) return v;
  std::string q = "\"";
  for (char c : v) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

}  // namespace detail

/// RFC 4180 table: rank,tid,depth,func,t_entry,t_exit,arg1..argN where N is
/// the largest registered arity. Shorter calls leave trailing cells empty.
inline void to_columnar(const TraceArchive& archive, std::ostream& out) {
  std::uint32_t width = 0;
  for (const auto& f : archive.meta().functions) width = std::max(width, f.arity);
  out << "rank,tid,depth,func,t_entry,t_exit";
  for (std::uint32_t i = 1; i <= width; ++i) out << ",arg" << i;
  out << "\r\n";
  for (std::uint32_t r = 0; r < archive.rank_count(); ++r) {
    for (const auto& rec : archive.read_records(r)) {
      out << r << ',' << rec.thread_id << ',' << unsigned{rec.call_depth} << ','
          << detail::csv_field(archive.registry().info(rec.func).name) << ',' << rec.t_entry << ',' << rec.t_exit;
      for (std::uint32_t i = 0; i < width; ++i) {
        out << ',';
        if (i < rec.args.size()) out << detail::csv_field(format_arg(rec.args[i]));
      }
      out << "\r\n";
    }
  }
}

struct StatsReport {
  std::map<std::string, std::uint64_t> calls;              // per function
  std::map<std::string, std::uint64_t> unique_signatures;  // per function
  std::uint64_t unique_grammars = 0;
  std::uint64_t cst_entries = 0;
  std::uint64_t total_records = 0;
  std::uint32_t rank_count = 0;
  std::map<std::string, std::uint64_t> file_sizes;

  nlohmann::ordered_json to_json() const {
    return {{"rank_count", rank_count},
            {"total_records", total_records},
            {"unique_grammars", unique_grammars},
            {"cst_entries", cst_entries},
            {"calls", calls},
            {"unique_signatures", unique_signatures},
            {"file_sizes", file_sizes}};
  }

  std::string to_text() const {
    std::string s;
    s += "ranks            " + std::to_string(rank_count) + "\n";
    s += "records          " + std::to_string(total_records) + "\n";
    s += "unique grammars  " + std::to_string(unique_grammars) + "\n";
    s += "cst entries      " + std::to_string(cst_entries) + "\n";
    s += "\nfunction                 calls  signatures\n";
    for (const auto& [name, n] : calls) {
      char line[128];
      std::snprintf(line, sizeof line, "%-20s %9llu  %10llu\n", name.c_str(), static_cast<unsigned long long>(n),
                    static_cast<unsigned long long>(unique_signatures.at(name)));
      s += line;
    }
    s += "\nfile              bytes\n";
    for (const auto& [name, n] : file_sizes) {
      char line[128];
      std::snprintf(line, sizeof line, "%-15s %7llu\n", name.c_str(), static_cast<unsigned long long>(n));
      s += line;
    }
    return s;
  }
};

inline StatsReport stats(const TraceArchive& archive) {
  StatsReport rep;
  const auto& res = archive.result();
  rep.rank_count = archive.rank_count();
  rep.unique_grammars = res.grammars.size();
  rep.cst_entries = res.cst.size();
  rep.file_sizes = archive.file_sizes();
  for (auto n : res.call_counts) rep.total_records += n;
  for (const auto& e : res.cst.entries()) {
    auto name = archive.registry().info(decode_signature(e.signature.bytes).func).name;
    rep.calls[name] += e.count;
    rep.unique_signatures[name] += 1;
  }
  return rep;
}

}  // namespace iotrace
