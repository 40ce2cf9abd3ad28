#pragma once

// CSV (RFC 4180) and JSON emission/parsing for profiler and benchmark
// reports. Both formats round-trip losslessly; floats print with
// max_digits10 so parsed values are bit-identical.

#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "y12/bench.hpp"
#include "y12/profiler.hpp"

namespace y12 {

namespace csv {

inline bool needs_quoting(const std::string& field) {
  return field.find_first_of(",\"\r\n") != std::string::npos;
}

inline std::string quote(const std::string& field) {
  if (!needs_quoting(field)) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += quote(fields[i]);
  }
  out += "\r\n";
  return out;
}

// Parses one RFC-4180 document into rows of fields.
inline std::vector<std::vector<std::string>> parse(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  std::size_t i = 0;
  auto end_field = [&] {
    fields.push_back(cur);
    cur.clear();
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(fields);
    fields.clear();
  };
  while (i < text.size()) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cur += '"';
          i += 2;
          continue;
        }
        quoted = false;
        ++i;
        continue;
      }
      cur += ch;
      ++i;
      continue;
    }
    switch (ch) {
      case '"':
        if (!cur.empty()) throw ParseError("csv: quote inside unquoted field at byte " +
                                           std::to_string(i));
        quoted = true;
        ++i;
        break;
      case ',':
        end_field();
        ++i;
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        [[fallthrough]];
      case '\n':
        end_row();
        ++i;
        break;
      default:
        cur += ch;
        ++i;
        break;
    }
  }
  if (quoted) throw ParseError("csv: unterminated quoted field");
  if (!cur.empty() || !fields.empty()) end_row();
  return rows;
}

}  // namespace csv

namespace detail {

inline std::string fp_to_string(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string shape_to_field(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

inline Shape shape_from_field(const std::string& field) {
  Shape s;
  std::size_t pos = 0;
  while (pos < field.size()) {
    std::size_t next = field.find('x', pos);
    if (next == std::string::npos) next = field.size();
    s.push_back(static_cast<std::size_t>(std::stoull(field.substr(pos, next - pos))));
    pos = next + 1;
  }
  return s;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw IoError("write failure on '" + path + "'");
}

inline std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace detail

// ---- FlopReport ------------------------------------------------------------

inline std::string flop_report_csv(const FlopReport& r) {
  std::string out = csv::row({"layer_id", "kind", "output_shape", "params", "macs"});
  for (const auto& row : r.rows)
    out += csv::row({std::to_string(row.id), row.kind, detail::shape_to_field(row.out_shape),
                     std::to_string(row.params), std::to_string(row.macs)});
  return out;
}

inline FlopReport flop_report_from_csv(const std::string& text, std::string scale = "",
                                       std::size_t input_size = 0) {
  auto rows = csv::parse(text);
  if (rows.empty() || rows[0] != std::vector<std::string>{"layer_id", "kind", "output_shape",
                                                          "params", "macs"})
    throw ParseError("flop csv: missing or malformed header row");
  FlopReport r;
  r.scale = std::move(scale);
  r.input_size = input_size;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() != 5)
      throw ParseError("flop csv: row " + std::to_string(i) + " has " +
                       std::to_string(f.size()) + " fields, expected 5");
    FlopRow row;
    row.id = std::stoi(f[0]);
    row.kind = f[1];
    row.out_shape = detail::shape_from_field(f[2]);
    row.params = std::stoull(f[3]);
    row.macs = std::stoull(f[4]);
    r.rows.push_back(std::move(row));
  }
  r.recompute_totals();
  return r;
}

inline nlohmann::json flop_report_json(const FlopReport& r) {
  nlohmann::json j;
  j["schema_version"] = "1";
  j["scale"] = r.scale;
  j["input_size"] = r.input_size;
  j["total_params"] = r.total_params;
  j["total_macs"] = r.total_macs;
  j["gflops"] = r.gflops();
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json jr;
    jr["id"] = row.id;
    jr["kind"] = row.kind;
    jr["output_shape"] = row.out_shape;
    jr["params"] = row.params;
    jr["macs"] = row.macs;
    j["rows"].push_back(jr);
  }
  return j;
}

inline FlopReport flop_report_from_json(const nlohmann::json& j) {
  if (!j.contains("schema_version") || j["schema_version"] != "1")
    throw ParseError("flop json: unsupported or missing schema_version");
  FlopReport r;
  r.scale = j.at("scale").get<std::string>();
  r.input_size = j.at("input_size").get<std::size_t>();
  for (const auto& jr : j.at("rows")) {
    FlopRow row;
    row.id = jr.at("id").get<int>();
    row.kind = jr.at("kind").get<std::string>();
    row.out_shape = jr.at("output_shape").get<Shape>();
    row.params = jr.at("params").get<std::uint64_t>();
    row.macs = jr.at("macs").get<std::uint64_t>();
    r.rows.push_back(std::move(row));
  }
  r.recompute_totals();
  if (r.total_params != j.at("total_params").get<std::uint64_t>() ||
      r.total_macs != j.at("total_macs").get<std::uint64_t>())
    throw ParseError("flop json: stored totals disagree with row sums");
  return r;
}

inline void emit_flop_report(const FlopReport& r, const std::string& format,
                             const std::string& path) {
  if (format == "csv")
    detail::write_text(path, flop_report_csv(r));
  else if (format == "json")
    detail::write_text(path, flop_report_json(r).dump(2) + "\n");
  else
    throw ConfigError("emit_flop_report: unknown format '" + format + "'");
}

// ---- BenchResult -----------------------------------------------------------

inline std::string bench_results_csv(const std::vector<BenchResult>& results) {
  std::string out = csv::row({"label", "kernel", "n", "heads", "head_dim", "segments",
                              "threads", "reps", "warmup", "median_ms", "p5_ms", "p95_ms",
                              "throughput_per_s", "status"});
  for (const auto& r : results)
    out += csv::row({r.label, r.kernel, std::to_string(r.n), std::to_string(r.heads),
                     std::to_string(r.head_dim), std::to_string(r.segments),
                     std::to_string(r.threads), std::to_string(r.repetitions),
                     std::to_string(r.warmup), detail::fp_to_string(r.median_ms),
                     detail::fp_to_string(r.p5_ms), detail::fp_to_string(r.p95_ms),
                     detail::fp_to_string(r.throughput_per_s),
                     r.skipped ? "skipped" : "ok"});
  return out;
}

inline std::vector<BenchResult> bench_results_from_csv(const std::string& text) {
  auto rows = csv::parse(text);
  if (rows.empty()) throw ParseError("bench csv: empty document");
  std::vector<BenchResult> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() != 14)
      throw ParseError("bench csv: row " + std::to_string(i) + " has " +
                       std::to_string(f.size()) + " fields, expected 14");
    BenchResult r;
    r.label = f[0];
    r.kernel = f[1];
    r.n = std::stoull(f[2]);
    r.heads = std::stoull(f[3]);
    r.head_dim = std::stoull(f[4]);
    r.segments = std::stoull(f[5]);
    r.threads = std::stoull(f[6]);
    r.repetitions = std::stoull(f[7]);
    r.warmup = std::stoull(f[8]);
    r.median_ms = std::stod(f[9]);
    r.p5_ms = std::stod(f[10]);
    r.p95_ms = std::stod(f[11]);
    r.throughput_per_s = std::stod(f[12]);
    r.skipped = f[13] == "skipped";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace y12
