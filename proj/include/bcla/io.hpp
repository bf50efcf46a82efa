#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bcla/data.hpp"
#include "bcla/error.hpp"

namespace bcla {

namespace csv {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? comma : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// Shortest representation that round-trips.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// Reads rows of a headed CSV. The callback receives the 1-based line number
// and the split fields of each non-empty data row.
template <class RowFn>
void read(std::istream& in, const std::string& source, std::string_view expected_header_prefix,
          std::vector<std::string>& header, RowFn&& on_row) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (!have_header) {
      std::string_view h = trim(line);
      if (h.size() >= 3 && static_cast<unsigned char>(h[0]) == 0xEF) h.remove_prefix(3);  // BOM
      header = split(h);
      if (h.substr(0, expected_header_prefix.size()) != expected_header_prefix)
        throw InputError(source + ":" + std::to_string(line_no) + ": expected header starting with '" +
                         std::string(expected_header_prefix) + "'");
      have_header = true;
      continue;
    }
    auto fields = split(line);
    if (fields.size() != header.size())
      throw InputError(source + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    on_row(line_no, fields);
  }
  if (!have_header) throw InputError(source + ": empty file");
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline double require_finite(std::string_view field, const std::string& source, std::size_t line) {
  const auto v = parse_double(field);
  if (!v) throw InputError(source + ":" + std::to_string(line) + ": cannot parse '" + std::string(field) + "' as a number");
  if (!std::isfinite(*v)) throw InputError(source + ":" + std::to_string(line) + ": non-finite value");
  return *v;
}

}  // namespace csv

// Long-format annotations: `record_id,annotator_id,value_ms`. Rows and columns
// follow first appearance.
inline AnnotationTable parse_annotations(std::istream& in, const std::string& source = "<stream>") {
  std::vector<std::string> header;
  std::vector<std::string> rec_ids, ann_ids;
  std::unordered_map<std::string, std::size_t> rec_index, ann_index;
  struct Cell {
    std::size_t i, j;
    double v;
    std::size_t line;
  };
  std::vector<Cell> cells;
  csv::read(in, source, "record_id,annotator_id,value_ms", header,
            [&](std::size_t line, const std::vector<std::string>& f) {
              if (f[0].empty() || f[1].empty())
                throw InputError(source + ":" + std::to_string(line) + ": empty identifier");
              const double v = csv::require_finite(f[2], source, line);
              auto [ri, rnew] = rec_index.try_emplace(f[0], rec_ids.size());
              if (rnew) rec_ids.push_back(f[0]);
              auto [ai, anew] = ann_index.try_emplace(f[1], ann_ids.size());
              if (anew) ann_ids.push_back(f[1]);
              cells.push_back({ri->second, ai->second, v, line});
            });
  if (header.size() != 3)
    throw InputError(source + ": header must be exactly record_id,annotator_id,value_ms");
  const std::size_t r = ann_ids.size();
  std::vector<double> values(rec_ids.size() * r, 0.0);
  std::vector<unsigned char> mask(rec_ids.size() * r, 0);
  for (const auto& c : cells) {
    auto& m = mask[c.i * r + c.j];
    if (m)
      throw InputError(source + ":" + std::to_string(c.line) + ": duplicate annotation for record '" +
                       rec_ids[c.i] + "', annotator '" + ann_ids[c.j] + "'");
    m = 1;
    values[c.i * r + c.j] = c.v;
  }
  if (rec_ids.empty()) throw InputError(source + ": no annotations");
  return AnnotationTable(std::move(rec_ids), std::move(ann_ids), std::move(values), std::move(mask));
}

inline AnnotationTable load_annotations(const std::filesystem::path& path) {
  auto in = csv::open_in(path);
  return parse_annotations(in, path.string());
}

inline void write_annotations(std::ostream& out, const AnnotationTable& t) {
  out << "record_id,annotator_id,value_ms\n";
  for (const auto& o : t.observations())
    out << t.record_ids()[o.record] << ',' << t.annotator_ids()[o.annotator] << ','
        << csv::format_double(o.value) << '\n';
}

inline void save_annotations(const AnnotationTable& t, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  write_annotations(out, t);
  csv::finish(out, path);
}

// `record_id,f1,...,fd`, aligned to `record_ids`.
inline FeatureTable parse_features(std::istream& in, const std::vector<std::string>& record_ids,
                                   bool intercept, const std::string& source = "<stream>") {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < record_ids.size(); ++i) index.emplace(record_ids[i], i);
  std::vector<std::string> header;
  std::vector<std::optional<std::vector<double>>> rows(record_ids.size());
  csv::read(in, source, "record_id", header, [&](std::size_t line, const std::vector<std::string>& f) {
    const auto it = index.find(f[0]);
    if (it == index.end())
      throw InputError(source + ":" + std::to_string(line) + ": record '" + f[0] +
                       "' is not in the annotation table");
    if (rows[it->second])
      throw InputError(source + ":" + std::to_string(line) + ": duplicate record '" + f[0] + "'");
    std::vector<double> v;
    for (std::size_t c = 1; c < f.size(); ++c) v.push_back(csv::require_finite(f[c], source, line));
    rows[it->second] = std::move(v);
  });
  const std::size_t d = header.size() - 1;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(record_ids.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < record_ids.size(); ++i) {
    if (!rows[i]) throw InputError(source + ": missing features for record '" + record_ids[i] + "'");
    for (std::size_t c = 0; c < d; ++c)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = (*rows[i])[c];
  }
  return FeatureTable(std::move(m), intercept, std::vector<std::string>(header.begin() + 1, header.end()));
}

inline FeatureTable load_features(const std::filesystem::path& path,
                                  const std::vector<std::string>& record_ids, bool intercept) {
  auto in = csv::open_in(path);
  return parse_features(in, record_ids, intercept, path.string());
}

// Two-column per-record file (`record_id,<value column>`), aligned to
// `record_ids`. Records absent from the file come back as NaN.
inline std::vector<double> parse_record_values(std::istream& in,
                                               const std::vector<std::string>& record_ids,
                                               const std::string& source = "<stream>") {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < record_ids.size(); ++i) index.emplace(record_ids[i], i);
  std::vector<double> out(record_ids.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<std::string> header;
  csv::read(in, source, "record_id", header, [&](std::size_t line, const std::vector<std::string>& f) {
    if (f.size() != 2)
      throw InputError(source + ":" + std::to_string(line) + ": expected two columns");
    const auto it = index.find(f[0]);
    if (it == index.end()) return;
    out[it->second] = csv::require_finite(f[1], source, line);
  });
  return out;
}

inline std::vector<double> load_record_values(const std::filesystem::path& path,
                                              const std::vector<std::string>& record_ids) {
  auto in = csv::open_in(path);
  return parse_record_values(in, record_ids, path.string());
}

// A headed CSV read as rows of string fields.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return c;
    throw InputError("missing column '" + std::string(name) + "'");
  }
};

inline CsvTable load_csv(const std::filesystem::path& path, std::string_view header_prefix) {
  auto in = csv::open_in(path);
  CsvTable t;
  csv::read(in, path.string(), header_prefix, t.header,
            [&](std::size_t, const std::vector<std::string>& f) { t.rows.push_back(f); });
  return t;
}

inline void save_truth(const AnnotationTable& t, const SimulationTruth& truth,
                       const std::filesystem::path& records_path,
                       const std::filesystem::path& annotators_path) {
  {
    auto out = csv::open_out(records_path);
    out << "record_id,z_true_ms\n";
    for (std::size_t i = 0; i < t.n_records(); ++i)
      out << t.record_ids()[i] << ',' << csv::format_double(truth.z_true[i]) << '\n';
    csv::finish(out, records_path);
  }
  auto out = csv::open_out(annotators_path);
  out << "annotator_id,phi_true_ms,sigma_true_ms\n";
  for (std::size_t j = 0; j < t.n_annotators(); ++j)
    out << t.annotator_ids()[j] << ',' << csv::format_double(truth.phi_true[j]) << ','
        << csv::format_double(truth.sigma_true[j]) << '\n';
  csv::finish(out, annotators_path);
}

struct AnnotatorTruth {
  std::vector<double> phi;
  std::vector<double> sigma;
};

// Aligns `annotator_id,phi_true_ms,sigma_true_ms` to `annotator_ids`.
inline AnnotatorTruth load_annotator_truth(const std::filesystem::path& path,
                                           const std::vector<std::string>& annotator_ids) {
  const auto t = load_csv(path, "annotator_id,phi_true_ms,sigma_true_ms");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < t.rows.size(); ++r) index.emplace(t.rows[r][0], r);
  AnnotatorTruth out;
  for (const auto& id : annotator_ids) {
    const auto it = index.find(id);
    if (it == index.end())
      throw InputError(path.string() + ": no truth for annotator '" + id + "'");
    const auto& row = t.rows[it->second];
    out.phi.push_back(csv::require_finite(row[1], path.string(), 0));
    out.sigma.push_back(csv::require_finite(row[2], path.string(), 0));
  }
  return out;
}

}  // namespace bcla
