#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bcla/error.hpp"
#include "bcla/rng.hpp"

namespace bcla {

// One observed label. `value` is in milliseconds.
struct Observation {
  std::uint32_t record;
  std::uint32_t annotator;
  double value;
};

// Sparse record x annotator table of continuous labels.
//
// Absence is encoded by the mask only; masked-false cells hold 0 and are never
// read by any routine in this library. Observations are additionally indexed
// record-major and annotator-major so every downstream sum touches observed
// cells only.
class AnnotationTable {
 public:
  AnnotationTable() = default;

  // `values` and `mask` are row-major n_records x n_annotators.
  AnnotationTable(std::vector<std::string> record_ids, std::vector<std::string> annotator_ids,
                  std::vector<double> values, std::vector<unsigned char> mask)
      : record_ids_(std::move(record_ids)),
        annotator_ids_(std::move(annotator_ids)),
        values_(std::move(values)),
        mask_(std::move(mask)) {
    validate_and_index();
  }

  std::size_t n_records() const { return record_ids_.size(); }
  std::size_t n_annotators() const { return annotator_ids_.size(); }
  std::size_t n_observed() const { return by_record_.size(); }

  bool observed(std::size_t i, std::size_t j) const { return mask_[i * n_annotators() + j] != 0; }
  double value(std::size_t i, std::size_t j) const { return values_[i * n_annotators() + j]; }

  const std::vector<std::string>& record_ids() const { return record_ids_; }
  const std::vector<std::string>& annotator_ids() const { return annotator_ids_; }

  // Observations of record i, in annotator order.
  std::span<const Observation> record_obs(std::size_t i) const {
    return {by_record_.data() + record_start_[i], record_start_[i + 1] - record_start_[i]};
  }
  // Observations of annotator j, in record order.
  std::span<const Observation> annotator_obs(std::size_t j) const {
    return {by_annotator_.data() + annotator_start_[j],
            annotator_start_[j + 1] - annotator_start_[j]};
  }
  // All observations, record-major.
  std::span<const Observation> observations() const { return by_record_; }

  // Restrict to the given annotator columns (kept in the given order). Records
  // left without any annotation are dropped; their original indices are
  // returned alongside the table.
  std::pair<AnnotationTable, std::vector<std::size_t>> select_annotators(
      std::span<const std::size_t> columns) const {
    std::vector<std::size_t> kept;
    std::vector<double> values;
    std::vector<unsigned char> mask;
    for (std::size_t i = 0; i < n_records(); ++i) {
      bool any = false;
      for (std::size_t c : columns) any = any || observed(i, c);
      if (!any) continue;
      kept.push_back(i);
      for (std::size_t c : columns) {
        values.push_back(observed(i, c) ? value(i, c) : 0.0);
        mask.push_back(mask_[i * n_annotators() + c]);
      }
    }
    std::vector<std::string> rec;
    for (std::size_t i : kept) rec.push_back(record_ids_[i]);
    std::vector<std::string> ann;
    for (std::size_t c : columns) ann.push_back(annotator_ids_[c]);
    return {AnnotationTable(std::move(rec), std::move(ann), std::move(values), std::move(mask)),
            std::move(kept)};
  }

  // Resample rows (duplicates allowed). Duplicated records receive a `#k`
  // suffix so identifiers stay unique. Annotators that end up with no labels
  // are dropped.
  AnnotationTable select_records(std::span<const std::size_t> rows) const {
    std::vector<std::size_t> count(n_records(), 0);
    std::vector<std::string> rec;
    for (std::size_t i : rows) {
      const std::size_t k = count[i]++;
      rec.push_back(k == 0 ? record_ids_[i] : record_ids_[i] + "#" + std::to_string(k));
    }
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < n_annotators(); ++j) {
      bool any = false;
      for (std::size_t i : rows) any = any || observed(i, j);
      if (any) cols.push_back(j);
    }
    std::vector<double> values;
    std::vector<unsigned char> mask;
    for (std::size_t i : rows) {
      for (std::size_t j : cols) {
        values.push_back(observed(i, j) ? value(i, j) : 0.0);
        mask.push_back(mask_[i * n_annotators() + j]);
      }
    }
    std::vector<std::string> ann;
    for (std::size_t j : cols) ann.push_back(annotator_ids_[j]);
    return AnnotationTable(std::move(rec), std::move(ann), std::move(values), std::move(mask));
  }

  friend bool operator==(const AnnotationTable& a, const AnnotationTable& b) {
    if (a.record_ids_ != b.record_ids_ || a.annotator_ids_ != b.annotator_ids_ ||
        a.mask_ != b.mask_)
      return false;
    for (std::size_t k = 0; k < a.mask_.size(); ++k)
      if (a.mask_[k] && a.values_[k] != b.values_[k]) return false;
    return true;
  }

 private:
  void validate_and_index() {
    const std::size_t n = record_ids_.size();
    const std::size_t r = annotator_ids_.size();
    if (values_.size() != n * r || mask_.size() != n * r)
      throw InputError("annotation table: value/mask size does not match record x annotator shape");
    check_unique(record_ids_, "record_id");
    check_unique(annotator_ids_, "annotator_id");

    record_start_.assign(n + 1, 0);
    std::vector<std::size_t> per_annotator(r, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t per_record = 0;
      for (std::size_t j = 0; j < r; ++j) {
        if (!mask_[i * r + j]) {
          values_[i * r + j] = 0.0;
          continue;
        }
        const double v = values_[i * r + j];
        if (!std::isfinite(v))
          throw InputError("non-finite value at record '" + record_ids_[i] + "', annotator '" +
                           annotator_ids_[j] + "'");
        by_record_.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), v});
        ++per_record;
        ++per_annotator[j];
      }
      if (per_record == 0) throw InputError("record '" + record_ids_[i] + "' has no annotations");
      record_start_[i + 1] = by_record_.size();
    }
    annotator_start_.assign(r + 1, 0);
    for (std::size_t j = 0; j < r; ++j) {
      if (per_annotator[j] == 0)
        throw InputError("annotator '" + annotator_ids_[j] + "' has no annotations");
      annotator_start_[j + 1] = annotator_start_[j] + per_annotator[j];
    }
    by_annotator_.resize(by_record_.size());
    std::vector<std::size_t> cursor(annotator_start_.begin(), annotator_start_.end() - 1);
    for (const auto& o : by_record_) by_annotator_[cursor[o.annotator]++] = o;
  }

  static void check_unique(const std::vector<std::string>& ids, const char* what) {
    std::unordered_set<std::string> seen;
    for (const auto& id : ids)
      if (!seen.insert(id).second) throw InputError(std::string("duplicate ") + what + " '" + id + "'");
  }

  std::vector<std::string> record_ids_;
  std::vector<std::string> annotator_ids_;
  std::vector<double> values_;
  std::vector<unsigned char> mask_;
  std::vector<Observation> by_record_;
  std::vector<Observation> by_annotator_;
  std::vector<std::size_t> record_start_{0};
  std::vector<std::size_t> annotator_start_{0};
};

// Per-record feature vectors. The effective design matrix appends a column of
// ones when `has_intercept` is set; with no user features it is the
// intercept-only column x_i = 1.
class FeatureTable {
 public:
  FeatureTable() = default;

  FeatureTable(Eigen::MatrixXd rows, bool has_intercept, std::vector<std::string> names = {})
      : rows_(std::move(rows)), has_intercept_(has_intercept), names_(std::move(names)) {
    if (!rows_.allFinite()) throw InputError("feature table contains non-finite entries");
    if (names_.empty())
      for (Eigen::Index c = 0; c < rows_.cols(); ++c) names_.push_back("f" + std::to_string(c + 1));
    if (names_.size() != static_cast<std::size_t>(rows_.cols()))
      throw InputError("feature table: name count does not match feature dimension");
    if (width() == 0) throw InputError("feature table: design matrix has no columns");
    build_design();
  }

  static FeatureTable intercept_only(std::size_t n_records) {
    return FeatureTable(Eigen::MatrixXd(static_cast<Eigen::Index>(n_records), 0), true);
  }

  std::size_t n_records() const { return static_cast<std::size_t>(rows_.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(rows_.cols()); }
  bool has_intercept() const { return has_intercept_; }
  // Number of regression weights.
  std::size_t width() const { return d() + (has_intercept_ ? 1 : 0); }
  const Eigen::MatrixXd& rows() const { return rows_; }
  const Eigen::MatrixXd& design() const { return design_; }
  const std::vector<std::string>& names() const { return names_; }

  // Column names of the design matrix, intercept last.
  std::vector<std::string> design_names() const {
    auto out = names_;
    if (has_intercept_) out.push_back("intercept");
    return out;
  }

  FeatureTable select_rows(std::span<const std::size_t> idx) const {
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(idx.size()), rows_.cols());
    for (std::size_t k = 0; k < idx.size(); ++k)
      sub.row(static_cast<Eigen::Index>(k)) = rows_.row(static_cast<Eigen::Index>(idx[k]));
    return FeatureTable(std::move(sub), has_intercept_, names_);
  }

 private:
  void build_design() {
    design_.resize(rows_.rows(), static_cast<Eigen::Index>(width()));
    if (rows_.cols() > 0) design_.leftCols(rows_.cols()) = rows_;
    if (has_intercept_) design_.col(design_.cols() - 1).setOnes();
  }

  Eigen::MatrixXd rows_;
  bool has_intercept_ = true;
  std::vector<std::string> names_;
  Eigen::MatrixXd design_;
};

struct SimulationTruth {
  std::vector<double> z_true;
  std::vector<double> phi_true;
  std::vector<double> sigma_true;
};

struct SimulationParams {
  std::size_t n_records = 548;
  std::size_t n_annotators = 20;
  double lambda_shape = 4.0;
  double lambda_scale = 0.0003;
  double bias_mean = 10.0;
  double bias_sd = 25.0;
  double truth_mean = 400.0;
  double truth_sd = 40.0;
  // Probability that a (record, annotator) cell is observed.
  double density = 1.0;

  void validate() const {
    if (n_records == 0 || n_annotators == 0)
      throw InputError("simulation: record and annotator counts must be positive");
    if (!(lambda_shape > 0.0) || !(lambda_scale > 0.0))
      throw InputError("simulation: Gamma shape and scale must be positive");
    if (!(bias_sd >= 0.0) || !(truth_sd >= 0.0))
      throw InputError("simulation: standard deviations must be non-negative");
    if (!(density > 0.0 && density <= 1.0))
      throw InputError("simulation: density must lie in (0, 1]");
  }
};

struct Simulation {
  AnnotationTable table;
  FeatureTable features;
  SimulationTruth truth;
};

inline std::string numbered_id(const char* prefix, std::size_t k, std::size_t total) {
  std::string digits = std::to_string(k + 1);
  const std::size_t width = std::to_string(total).size();
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

// Draws precisions, then biases, then true labels, then labels in record-major
// order. Under partial density, a record whose mask came out empty gets one
// uniformly chosen annotator, and an annotator left with no labels gets one
// uniformly chosen record.
inline Simulation simulate(const SimulationParams& p, std::uint64_t seed) {
  p.validate();
  Engine eng = make_engine(seed);
  const std::size_t n = p.n_records;
  const std::size_t r = p.n_annotators;

  SimulationTruth truth;
  std::vector<double> lambda(r);
  for (auto& l : lambda) l = draw_gamma(eng, p.lambda_shape, p.lambda_scale);
  truth.phi_true.resize(r);
  for (auto& f : truth.phi_true) f = draw_normal(eng, p.bias_mean, p.bias_sd);
  truth.z_true.resize(n);
  for (auto& z : truth.z_true) z = draw_normal(eng, p.truth_mean, p.truth_sd);
  truth.sigma_true.resize(r);
  for (std::size_t j = 0; j < r; ++j) truth.sigma_true[j] = 1.0 / std::sqrt(lambda[j]);

  std::vector<unsigned char> mask(n * r, 1);
  if (p.density < 1.0) {
    for (auto& m : mask) m = draw_uniform(eng) < p.density ? 1 : 0;
    for (std::size_t i = 0; i < n; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < r; ++j) any = any || mask[i * r + j];
      if (!any) mask[i * r + draw_index(eng, r)] = 1;
    }
    for (std::size_t j = 0; j < r; ++j) {
      bool any = false;
      for (std::size_t i = 0; i < n; ++i) any = any || mask[i * r + j];
      if (!any) mask[draw_index(eng, n) * r + j] = 1;
    }
  }

  std::vector<double> values(n * r, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < r; ++j)
      if (mask[i * r + j])
        values[i * r + j] =
            draw_normal(eng, truth.z_true[i] + truth.phi_true[j], truth.sigma_true[j]);

  std::vector<std::string> rec, ann;
  for (std::size_t i = 0; i < n; ++i) rec.push_back(numbered_id("r", i, n));
  for (std::size_t j = 0; j < r; ++j) ann.push_back(numbered_id("a", j, r));
  return {AnnotationTable(std::move(rec), std::move(ann), std::move(values), std::move(mask)),
          FeatureTable::intercept_only(n), std::move(truth)};
}

struct ObservedCounts {
  std::vector<std::size_t> per_annotator;  // N_j
  std::vector<std::size_t> per_record;     // R_i
};

inline ObservedCounts observed_counts(const AnnotationTable& t) {
  ObservedCounts c;
  c.per_annotator.resize(t.n_annotators());
  c.per_record.resize(t.n_records());
  for (std::size_t j = 0; j < t.n_annotators(); ++j) c.per_annotator[j] = t.annotator_obs(j).size();
  for (std::size_t i = 0; i < t.n_records(); ++i) c.per_record[i] = t.record_obs(i).size();
  return c;
}

}  // namespace bcla
