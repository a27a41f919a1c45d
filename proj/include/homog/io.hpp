#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <variant>

#include "homog/field.hpp"

namespace homog {

namespace fs = std::filesystem;

/// Fixed 17-significant-digit rendering so CSV output is reproducible bit for bit.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return json::parse(in);
}

/// A table of numbers and strings written as CSV.
class CsvTable {
 public:
  using Cell = std::variant<double, long, std::string>;

  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(std::vector<Cell> row) {
    if (row.size() != header_.size()) throw InvalidArgument("CSV row width does not match the header");
    rows_.push_back(std::move(row));
  }
  std::size_t rows() const { return rows_.size(); }

  std::string str() const {
    std::string s;
    for (std::size_t i = 0; i < header_.size(); ++i) s += (i ? "," : "") + header_[i];
    s += "\n";
    for (const auto& row : rows_) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) s += ",";
        if (const auto* d = std::get_if<double>(&row[i])) s += format_double(*d);
        else if (const auto* l = std::get_if<long>(&row[i])) s += std::to_string(*l);
        else s += std::get<std::string>(row[i]);
      }
      s += "\n";
    }
    return s;
  }
  void write(const fs::path& path) const { write_text(path, str()); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<Cell>> rows_;
};

/// Node field as raw little-endian float64 (<base>.bin) with a JSON sidecar (<base>.json).
inline void write_node_field(const fs::path& base, const NodeField& f, json meta) {
  if (base.has_parent_path()) fs::create_directories(base.parent_path());
  fs::path bin = base;
  bin += ".bin";
  fs::path side = base;
  side += ".json";
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw Error("cannot open " + bin.string());
  out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(double)));
  if (!out) throw Error("write failed: " + bin.string());
  meta["count"] = f.size();
  meta["dtype"] = "float64-le";
  write_json(side, meta);
}

inline std::pair<NodeField, json> read_node_field(const fs::path& base) {
  fs::path bin = base;
  bin += ".bin";
  fs::path side = base;
  side += ".json";
  json meta = read_json(side);
  const auto count = meta.at("count").get<std::size_t>();
  NodeField f(count);
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw Error("cannot open " + bin.string());
  in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
    throw Error("node field " + bin.string() + " is truncated");
  return {std::move(f), std::move(meta)};
}

}  // namespace homog
