#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "atrpp/data.hpp"
#include "atrpp/errors.hpp"

namespace atrpp::io {

using nlohmann::json;

// Shortest decimal form that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc{}) throw DataError("cannot format number");
  return {buf, end};
}

inline double parse_double(std::string_view text, std::string_view what) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw DataError("bad number for " + std::string(what) + ": '" + std::string(text) + "'");
  return value;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

// ---------------------------------------------------------------------------
// Event JSONL: {"id": str, "Z": int, "events": [{"dim": int, "time": float}]}

inline json record_to_json(const Record& r) {
  json events = json::array();
  for (const auto& e : r.sequence.events) events.push_back({{"dim", e.dim}, {"time", e.time}});
  return {{"id", r.id}, {"Z", r.sequence.num_dims}, {"events", std::move(events)}};
}

inline Record record_from_json(const json& j) {
  Record r;
  if (!j.is_object()) throw DataError("record is not a JSON object");
  for (const char* key : {"id", "Z", "events"})
    if (!j.contains(key)) throw DataError(std::string("missing \"") + key + "\"");
  r.id = j.at("id").get<std::string>();
  r.sequence.num_dims = j.at("Z").get<int>();
  if (r.sequence.num_dims <= 0) throw DataError("Z must be positive");
  for (const auto& e : j.at("events")) {
    if (!e.contains("dim")) throw DataError("event missing \"dim\"");
    if (!e.contains("time")) throw DataError("event missing \"time\"");
    Event ev{e.at("dim").get<int>(), e.at("time").get<double>()};
    if (ev.dim < 0 || ev.dim >= r.sequence.num_dims)
      throw DataError("dim " + std::to_string(ev.dim) + " out of range [0, Z)");
    r.sequence.events.push_back(ev);
  }
  return r;
}

inline void write_event_jsonl(std::span<const Record> records, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

inline std::vector<Record> read_event_jsonl(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<Record> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Series CSV: header id,start_time,step,f0,f1,...; one row per sample.

inline void write_series_csv(std::span<const Record> records, const std::filesystem::path& path) {
  Eigen::Index width = -1;
  for (const auto& r : records) {
    if (!r.series) continue;
    if (width >= 0 && r.series->width() != width)
      throw DataError("records disagree on feature width F");
    width = r.series->width();
  }
  auto out = open_out(path);
  out << "id,start_time,step";
  for (Eigen::Index f = 0; f < std::max<Eigen::Index>(width, 0); ++f) out << ",f" << f;
  out << '\n';
  for (const auto& r : records) {
    if (!r.series) continue;
    const auto& s = *r.series;
    const auto start = format_double(s.start_time);
    const auto step = format_double(s.step);
    for (Eigen::Index k = 0; k < s.length(); ++k) {
      out << r.id << ',' << start << ',' << step;
      for (Eigen::Index f = 0; f < s.width(); ++f) out << ',' << format_double(s.samples(k, f));
      out << '\n';
    }
  }
  if (!out) throw DataError("write failed: " + path.string());
}

// Series keyed by record id, in file order.
inline std::vector<std::pair<std::string, TimeSeries>> read_series_csv(
    const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty series file");
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "start_time" ||
      header[2].substr(0, 4) != "step")
    throw DataError(path.string() + ":1: header must start with id,start_time,step");
  const auto width = static_cast<Eigen::Index>(header.size() - 3);

  std::vector<std::pair<std::string, TimeSeries>> out;
  std::vector<std::vector<double>> rows;
  auto flush = [&] {
    if (out.empty() || rows.empty()) return;
    auto& s = out.back().second;
    s.samples.resize(static_cast<Eigen::Index>(rows.size()), width);
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (Eigen::Index f = 0; f < width; ++f)
        s.samples(static_cast<Eigen::Index>(k), f) = rows[k][static_cast<std::size_t>(f)];
    rows.clear();
  };

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    const auto fields = split_csv_line(line);
    if (static_cast<Eigen::Index>(fields.size()) != width + 3)
      throw DataError(where + "expected " + std::to_string(width + 3) + " fields");
    try {
      const std::string id(fields[0]);
      const double start = parse_double(fields[1], "start_time");
      const double step = parse_double(fields[2], "step");
      if (out.empty() || out.back().first != id) {
        flush();
        for (const auto& [seen, _] : out)
          if (seen == id) throw DataError("rows for id '" + id + "' are not contiguous");
        out.push_back({id, TimeSeries{start, step, {}}});
      } else if (out.back().second.start_time != start || out.back().second.step != step) {
        throw DataError("start_time/step change within id '" + id + "'");
      }
      std::vector<double> row(static_cast<std::size_t>(width));
      for (Eigen::Index f = 0; f < width; ++f)
        row[static_cast<std::size_t>(f)] = parse_double(fields[static_cast<std::size_t>(f + 3)], "feature");
      rows.push_back(std::move(row));
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  flush();
  return out;
}

/// Reads event records and, when a series file is given, attaches each
/// record's series by id.
inline std::vector<Record> read_records(const std::filesystem::path& events_path,
                                        const std::filesystem::path& series_path = {}) {
  auto records = read_event_jsonl(events_path);
  if (series_path.empty()) return records;
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!by_id.emplace(records[i].id, i).second)
      throw DataError("duplicate record id '" + records[i].id + "'");
  }
  for (auto& [id, series] : read_series_csv(series_path)) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("series for unknown record id '" + id + "'");
    records[it->second].series = std::move(series);
  }
  return records;
}

inline void write_records(std::span<const Record> records, const std::filesystem::path& events_path,
                          const std::filesystem::path& series_path = {}) {
  write_event_jsonl(records, events_path);
  if (!series_path.empty()) write_series_csv(records, series_path);
}

// ---------------------------------------------------------------------------
// Plain numeric matrices (mu.csv, A.csv, infectivity exports): no header.

inline void write_matrix_csv(const Eigen::MatrixXd& m, const std::filesystem::path& path) {
  auto out = open_out(path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

inline Eigen::MatrixXd read_matrix_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    try {
      for (auto f : split_csv_line(line)) row.push_back(parse_double(f, "matrix entry"));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": ragged row");
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  auto out = open_out(path);
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace atrpp::io
