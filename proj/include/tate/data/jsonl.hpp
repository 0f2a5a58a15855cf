#pragma once

#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "tate/data/segment.hpp"

namespace tate {

namespace detail {

inline Tensor parse_sequence(const nlohmann::json& rows, Modality m, std::size_t line) {
  const std::string key(name_of(m));
  if (!rows.is_array() || rows.empty()) {
    throw ParseError(line, "'" + key + "' must be a nonempty array of arrays");
  }
  const std::size_t n = std::min(rows.size(), kMaxLength[index_of(m)]);
  std::size_t width = 0;
  std::vector<double> data;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (!row.is_array() || row.empty()) throw ParseError(line, "'" + key + "' row " + std::to_string(r) + " is not a nonempty array");
    if (r == 0) width = row.size();
    if (row.size() != width) {
      throw SchemaError("line " + std::to_string(line) + ": '" + key + "' row " + std::to_string(r) + " has width " +
                        std::to_string(row.size()) + ", expected " + std::to_string(width));
    }
    if (r >= n) continue;
    for (const auto& v : row) {
      if (!v.is_number()) throw ParseError(line, "'" + key + "' holds a non-numeric value");
      data.push_back(v.get<double>());
    }
  }
  return Tensor({n, width}, std::move(data));
}

}  // namespace detail

/// Reads one segment per line: {"id", "label", "visual", "acoustic", "textual"}.
/// Blank lines are skipped. When `class_count` is absent it is inferred as
/// max(label) + 1.
inline Dataset read_jsonl(std::istream& in, std::optional<std::size_t> class_count = std::nullopt) {
  Dataset ds;
  std::string text;
  std::size_t line = 0;
  std::size_t max_label = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(line, "expected a JSON object");
    Segment s;
    try {
      s.id = obj.at("id").get<std::string>();
      const auto label = obj.at("label").get<long long>();
      if (label < 0) throw ParseError(line, "label must be non-negative");
      s.label = static_cast<std::size_t>(label);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line, std::string("bad id/label: ") + e.what());
    }
    for (Modality m : kModalities) {
      const std::string key(name_of(m));
      if (!obj.contains(key)) throw ParseError(line, "missing '" + key + "'");
      s[m] = detail::parse_sequence(obj[key], m, line);
      const std::size_t w = s[m].cols();
      auto& dw = ds.widths[index_of(m)];
      if (ds.segments.empty()) {
        dw = w;
      } else if (dw != w) {
        throw SchemaError("line " + std::to_string(line) + ": " + key + " width " + std::to_string(w) +
                          " differs from dataset width " + std::to_string(dw));
      }
    }
    max_label = std::max(max_label, s.label);
    ds.segments.push_back(std::move(s));
  }
  if (class_count) {
    ds.class_count = *class_count;
  } else {
    ds.class_count = ds.segments.empty() ? 0 : max_label + 1;
  }
  ds.validate();
  return ds;
}

inline Dataset load_jsonl(const std::string& path, std::optional<std::size_t> class_count = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  return read_jsonl(in, class_count);
}

inline nlohmann::json segment_to_json(const Segment& s) {
  nlohmann::json obj;
  obj["id"] = s.id;
  obj["label"] = s.label;
  for (Modality m : kModalities) {
    const Tensor& t = s[m];
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < t.rows(); ++r) {
      auto span = t.row_span(r);
      rows.push_back(std::vector<double>(span.begin(), span.end()));
    }
    obj[std::string(name_of(m))] = std::move(rows);
  }
  return obj;
}

inline void write_jsonl(std::ostream& out, const Dataset& ds) {
  for (const auto& s : ds.segments) out << segment_to_json(s).dump() << '\n';
}

inline void save_jsonl(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_jsonl(out, ds);
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

}  // namespace tate
