#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tcnet/data/csv.hpp"
#include "tcnet/data/schema.hpp"
#include "tcnet/matrix.hpp"

namespace tcnet::data {

struct NumericStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Per-feature standardization statistics; entries for categorical features are unused.
using EncodingStats = std::vector<NumericStats>;

/// One domain's rows: raw values, encoded matrix, optional labels and circle ids.
///
/// Raw storage is rows x feature_count where a categorical cell holds its
/// category index and a numeric cell holds the value itself.
class DomainDataset {
 public:
  DomainDataset() = default;
  DomainDataset(std::shared_ptr<const TabularSchema> schema, Matrix raw,
                std::optional<std::vector<int>> labels, std::vector<std::string> circle_ids)
      : schema_(std::move(schema)), raw_(std::move(raw)), labels_(std::move(labels)),
        circle_ids_(std::move(circle_ids)) {
    if (!schema_) fail(ErrorKind::InvalidArgument, "dataset without schema");
    if (raw_.cols() != schema_->feature_count() && raw_.rows() > 0)
      fail(ErrorKind::SchemaMismatch, "raw width " + std::to_string(raw_.cols()) + " vs " +
                                          std::to_string(schema_->feature_count()) + " features");
    if (raw_.rows() == 0) raw_ = Matrix(0, schema_->feature_count());
    if (circle_ids_.size() != raw_.rows()) fail(ErrorKind::LengthMismatch, "circle id count differs from row count");
    if (labels_) {
      if (labels_->size() != raw_.rows()) fail(ErrorKind::LengthMismatch, "label count differs from row count");
      for (int y : *labels_)
        if (y != 0 && y != 1) fail(ErrorKind::InvalidArgument, "labels must be 0 or 1");
    }
    for (std::size_t r = 0; r < raw_.rows(); ++r) {
      for (std::size_t f = 0; f < schema_->feature_count(); ++f) {
        const auto& spec = schema_->feature(f);
        const double v = raw_(r, f);
        if (!std::isfinite(v)) fail(ErrorKind::UnparsableNumeric, "non-finite raw value");
        if (spec.categorical() &&
            (v < 0 || v >= static_cast<double>(spec.categories.size()) || v != std::floor(v)))
          fail(ErrorKind::UnknownCategory, "category index out of range for " + spec.name);
      }
    }
  }

  const TabularSchema& schema() const { return *schema_; }
  const std::shared_ptr<const TabularSchema>& schema_ptr() const noexcept { return schema_; }
  std::size_t size() const noexcept { return raw_.rows(); }
  bool empty() const noexcept { return raw_.rows() == 0; }

  const Matrix& raw() const noexcept { return raw_; }
  std::size_t category(std::size_t row, std::size_t feature) const {
    return static_cast<std::size_t>(raw_(row, feature));
  }
  double numeric(std::size_t row, std::size_t feature) const { return raw_(row, feature); }

  bool encoded_ready() const noexcept { return encoded_.rows() == raw_.rows() && !stats_.empty(); }
  const Matrix& encoded() const {
    if (!encoded_ready()) fail(ErrorKind::InvalidArgument, "dataset has not been encoded");
    return encoded_;
  }
  const EncodingStats& stats() const noexcept { return stats_; }

  bool has_labels() const noexcept { return labels_.has_value(); }
  /// Set when a schema declares a label column that the loaded file lacks.
  bool label_column_missing() const noexcept { return label_column_missing_; }

  const std::vector<int>& labels() const {
    if (!labels_) fail(ErrorKind::UnlabeledDataset, "dataset carries no labels");
    return *labels_;
  }
  std::vector<double> labels_as_double() const {
    const auto& y = labels();
    return std::vector<double>(y.begin(), y.end());
  }
  std::size_t positive_count() const {
    const auto& y = labels();
    return static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  }

  const std::vector<std::string>& circle_ids() const noexcept { return circle_ids_; }

  /// Copy restricted to the given rows; encoding and statistics carry over.
  DomainDataset subset(std::span<const std::size_t> rows) const {
    Matrix raw(rows.size(), raw_.cols());
    std::vector<std::string> circles;
    std::optional<std::vector<int>> labels;
    if (labels_) labels.emplace();
    Matrix enc = encoded_ready() ? Matrix(rows.size(), encoded_.cols()) : Matrix();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t r = rows[i];
      if (r >= raw_.rows()) fail(ErrorKind::OutOfRange, "subset row " + std::to_string(r));
      std::copy(raw_.row(r).begin(), raw_.row(r).end(), raw.row(i).begin());
      circles.push_back(circle_ids_[r]);
      if (labels_) labels->push_back((*labels_)[r]);
      if (encoded_ready()) std::copy(encoded_.row(r).begin(), encoded_.row(r).end(), enc.row(i).begin());
    }
    DomainDataset out(schema_, std::move(raw), std::move(labels), std::move(circles));
    out.encoded_ = std::move(enc);
    out.stats_ = stats_;
    out.label_column_missing_ = label_column_missing_;
    return out;
  }

  DomainDataset without_labels() const {
    DomainDataset out = *this;
    out.labels_.reset();
    return out;
  }

  /// Rows whose circle id is in the given set.
  std::vector<std::size_t> rows_in_circles(const std::vector<std::string>& circles) const {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < size(); ++r)
      if (std::find(circles.begin(), circles.end(), circle_ids_[r]) != circles.end()) rows.push_back(r);
    return rows;
  }

  /// Distinct circle ids in first-appearance order.
  std::vector<std::string> distinct_circles() const {
    std::vector<std::string> out;
    for (const auto& c : circle_ids_)
      if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
    return out;
  }

 private:
  friend void encode(DomainDataset&, const DomainDataset*);
  friend void encode_with_stats(DomainDataset&, const EncodingStats&);
  friend DomainDataset dataset_from_csv(const CsvTable&, std::shared_ptr<const TabularSchema>);

  std::shared_ptr<const TabularSchema> schema_;
  Matrix raw_;
  std::optional<std::vector<int>> labels_;
  std::vector<std::string> circle_ids_;
  Matrix encoded_;
  EncodingStats stats_;
  bool label_column_missing_ = false;
};

/// Population mean and standard deviation of every numeric feature.
inline EncodingStats compute_stats(const DomainDataset& d) {
  const auto& schema = d.schema();
  EncodingStats stats(schema.feature_count());
  const double n = static_cast<double>(d.size());
  for (std::size_t f = 0; f < schema.feature_count(); ++f) {
    if (schema.feature(f).categorical() || d.empty()) continue;
    double mean = 0.0;
    for (std::size_t r = 0; r < d.size(); ++r) mean += d.numeric(r, f);
    mean /= n;
    double var = 0.0;
    for (std::size_t r = 0; r < d.size(); ++r) var += (d.numeric(r, f) - mean) * (d.numeric(r, f) - mean);
    stats[f] = {mean, std::sqrt(var / n)};
  }
  return stats;
}

inline void encode_row(const TabularSchema& schema, const EncodingStats& stats,
                       std::span<const double> raw, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t f = 0; f < schema.feature_count(); ++f) {
    const std::size_t off = schema.offset(f);
    if (schema.feature(f).categorical()) {
      out[off + static_cast<std::size_t>(raw[f])] = 1.0;
    } else {
      const auto& s = stats[f];
      out[off] = s.std > 0.0 ? (raw[f] - s.mean) / s.std : 0.0;
    }
  }
}

/// Inverse of encode_row: argmax per one-hot group, (v * std + mean) per numeric.
inline std::vector<double> decode_row(const TabularSchema& schema, const EncodingStats& stats,
                                      std::span<const double> encoded) {
  std::vector<double> raw(schema.feature_count());
  for (std::size_t f = 0; f < schema.feature_count(); ++f) {
    const std::size_t off = schema.offset(f);
    const auto& spec = schema.feature(f);
    if (spec.categorical()) {
      auto begin = encoded.begin() + static_cast<std::ptrdiff_t>(off);
      auto it = std::max_element(begin, begin + static_cast<std::ptrdiff_t>(spec.categories.size()));
      raw[f] = static_cast<double>(it - begin);
    } else {
      raw[f] = encoded[off] * stats[f].std + stats[f].mean;
    }
  }
  return raw;
}

inline void encode_with_stats(DomainDataset& d, const EncodingStats& stats) {
  const auto& schema = d.schema();
  if (stats.size() != schema.feature_count()) fail(ErrorKind::SchemaMismatch, "encoding stats width mismatch");
  Matrix enc(d.size(), schema.encoded_width());
  for (std::size_t r = 0; r < d.size(); ++r) encode_row(schema, stats, d.raw().row(r), enc.row(r));
  d.encoded_ = std::move(enc);
  d.stats_ = stats;
}

/// One-hot categorical features and standardize numerics, using the statistics
/// of `stats_source` when given (target encoded in the source's space).
inline void encode(DomainDataset& d, const DomainDataset* stats_source = nullptr) {
  if (stats_source) {
    if (!(stats_source->schema() == d.schema())) fail(ErrorKind::SchemaMismatch, "stats source schema differs");
    encode_with_stats(d, stats_source->stats().empty() ? compute_stats(*stats_source) : stats_source->stats());
  } else {
    encode_with_stats(d, compute_stats(d));
  }
}

inline DomainDataset dataset_from_csv(const CsvTable& table, std::shared_ptr<const TabularSchema> schema) {
  const auto& s = *schema;
  std::vector<std::size_t> cols;
  for (const auto& f : s.features()) {
    auto c = table.column(f.name);
    if (!c) fail(ErrorKind::MissingColumn, "column '" + f.name + "' not found in header");
    cols.push_back(*c);
  }
  const auto label_col = table.column(s.label_column());
  const auto circle_col = table.column(s.circle_column());

  Matrix raw(table.rows.size(), s.feature_count());
  std::optional<std::vector<int>> labels;
  if (label_col) labels.emplace();
  std::vector<std::string> circles;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    for (std::size_t f = 0; f < s.feature_count(); ++f) {
      const auto& spec = s.feature(f);
      const std::string& cell = row[cols[f]];
      if (spec.categorical()) {
        auto idx = spec.category_index(cell);
        if (!idx) {
          fail(ErrorKind::UnknownCategory, "row " + std::to_string(r + 1) + ", column '" + spec.name +
                                               "': value '" + cell + "' is not a schema category");
        }
        raw(r, f) = static_cast<double>(*idx);
      } else {
        auto v = parse_double(cell);
        if (!v || !std::isfinite(*v)) {
          fail(ErrorKind::UnparsableNumeric,
               "row " + std::to_string(r + 1) + ", column '" + spec.name + "': '" + cell + "'");
        }
        raw(r, f) = *v;
      }
    }
    if (label_col) {
      const std::string& cell = row[*label_col];
      if (cell != "0" && cell != "1") {
        fail(ErrorKind::UnparsableNumeric,
             "row " + std::to_string(r + 1) + ": label '" + cell + "' is not 0 or 1");
      }
      labels->push_back(cell == "1" ? 1 : 0);
    }
    circles.push_back(circle_col ? row[*circle_col] : std::string("all"));
  }
  DomainDataset d(std::move(schema), std::move(raw), std::move(labels), std::move(circles));
  d.label_column_missing_ = !label_col;
  return d;
}

inline DomainDataset load_dataset(const std::string& csv_path, std::shared_ptr<const TabularSchema> schema) {
  return dataset_from_csv(parse_csv(read_file(csv_path)), std::move(schema));
}

inline CsvTable dataset_to_csv(const DomainDataset& d, bool include_labels = true) {
  const auto& s = d.schema();
  CsvTable t;
  for (const auto& f : s.features()) t.header.push_back(f.name);
  const bool labels = include_labels && d.has_labels();
  if (labels) t.header.push_back(s.label_column());
  t.header.push_back(s.circle_column());
  for (std::size_t r = 0; r < d.size(); ++r) {
    std::vector<std::string> row;
    for (std::size_t f = 0; f < s.feature_count(); ++f) {
      if (s.feature(f).categorical())
        row.push_back(s.feature(f).categories[d.category(r, f)]);
      else
        row.push_back(format_double(d.numeric(r, f)));
    }
    if (labels) row.push_back(d.labels()[r] ? "1" : "0");
    row.push_back(d.circle_ids()[r]);
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline void save_dataset(const std::string& path, const DomainDataset& d, bool include_labels = true) {
  write_file(path, write_csv(dataset_to_csv(d, include_labels)));
}

/// Stratified train/validation split; each class is shuffled with the seed and
/// round(fraction * class_size) of its rows go to training.
inline std::pair<DomainDataset, DomainDataset> split_source(const DomainDataset& d, double train_fraction,
                                                            std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    fail(ErrorKind::InvalidArgument, "train_fraction must lie in (0,1)");
  const auto& y = d.labels();
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train, val;
  for (int cls : {1, 0}) {
    std::vector<std::size_t> idx;
    for (std::size_t r = 0; r < y.size(); ++r)
      if (y[r] == cls) idx.push_back(r);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    if (cls == 1 && (n_train == 0 || n_train == idx.size())) {
      fail(ErrorKind::TooFewMinority, std::to_string(idx.size()) +
                                          " minority rows cannot populate both partitions");
    }
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    val.insert(val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {d.subset(train), d.subset(val)};
}

}  // namespace tcnet::data
