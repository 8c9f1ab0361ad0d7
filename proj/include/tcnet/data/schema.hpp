#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcnet/digest.hpp"
#include "tcnet/error.hpp"

namespace tcnet::data {

enum class FeatureKind { Categorical, Numeric };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Numeric;
  std::vector<std::string> categories;  // categorical only

  bool categorical() const noexcept { return kind == FeatureKind::Categorical; }

  std::optional<std::size_t> category_index(const std::string& value) const {
    for (std::size_t i = 0; i < categories.size(); ++i)
      if (categories[i] == value) return i;
    return std::nullopt;
  }
};

/// Ordered feature descriptors plus label and circle columns.
class TabularSchema {
 public:
  TabularSchema() = default;
  TabularSchema(std::vector<FeatureSpec> features, std::string label_column, std::string circle_column)
      : features_(std::move(features)),
        label_column_(std::move(label_column)),
        circle_column_(std::move(circle_column)) {
    validate();
    std::size_t off = 0;
    for (const auto& f : features_) {
      offsets_.push_back(off);
      off += f.categorical() ? f.categories.size() : 1;
    }
    encoded_width_ = off;
  }

  const std::vector<FeatureSpec>& features() const noexcept { return features_; }
  const FeatureSpec& feature(std::size_t i) const { return features_.at(i); }
  std::size_t feature_count() const noexcept { return features_.size(); }
  const std::string& label_column() const noexcept { return label_column_; }
  const std::string& circle_column() const noexcept { return circle_column_; }

  /// Width of the encoded row: sum of category counts plus one per numeric feature.
  std::size_t encoded_width() const noexcept { return encoded_width_; }
  std::size_t offset(std::size_t feature) const { return offsets_.at(feature); }

  std::size_t categorical_count() const {
    std::size_t n = 0;
    for (const auto& f : features_) n += f.categorical() ? 1 : 0;
    return n;
  }

  std::vector<std::string> feature_names() const {
    std::vector<std::string> names;
    for (const auto& f : features_) names.push_back(f.name);
    return names;
  }

  nlohmann::json to_json() const {
    nlohmann::json fs = nlohmann::json::array();
    for (const auto& f : features_) {
      nlohmann::json j{{"name", f.name}, {"kind", f.categorical() ? "categorical" : "numeric"}};
      if (f.categorical()) j["categories"] = f.categories;
      fs.push_back(std::move(j));
    }
    return {{"features", fs}, {"label_column", label_column_}, {"circle_column", circle_column_}};
  }

  /// Accepts the schema document; extra top-level keys (e.g. provenance) are ignored.
  static TabularSchema from_json(const nlohmann::json& j) {
    try {
      std::vector<FeatureSpec> fs;
      for (const auto& jf : j.at("features")) {
        FeatureSpec f;
        f.name = jf.at("name").get<std::string>();
        const auto kind = jf.at("kind").get<std::string>();
        if (kind == "categorical") {
          f.kind = FeatureKind::Categorical;
          f.categories = jf.at("categories").get<std::vector<std::string>>();
        } else if (kind == "numeric") {
          f.kind = FeatureKind::Numeric;
        } else {
          fail(ErrorKind::Format, "feature " + f.name + ": unknown kind '" + kind + "'");
        }
        fs.push_back(std::move(f));
      }
      return TabularSchema(std::move(fs), j.at("label_column").get<std::string>(),
                           j.at("circle_column").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Format, std::string("schema: ") + e.what());
    }
  }

  std::string canonical_json() const { return to_json().dump(); }
  std::string digest() const { return sha256_hex(canonical_json()); }

  friend bool operator==(const TabularSchema& a, const TabularSchema& b) {
    return a.canonical_json() == b.canonical_json();
  }

 private:
  void validate() const {
    if (features_.size() < 2) fail(ErrorKind::InvalidArgument, "schema needs at least 2 features");
    std::set<std::string> names{label_column_, circle_column_};
    if (label_column_.empty() || circle_column_.empty() || label_column_ == circle_column_)
      fail(ErrorKind::InvalidArgument, "label and circle columns must be distinct and non-empty");
    for (const auto& f : features_) {
      if (f.name.empty() || !names.insert(f.name).second)
        fail(ErrorKind::InvalidArgument, "duplicate or empty feature name '" + f.name + "'");
      if (f.categorical()) {
        if (f.categories.empty())
          fail(ErrorKind::InvalidArgument, "categorical feature " + f.name + " has no categories");
        std::set<std::string> cats(f.categories.begin(), f.categories.end());
        if (cats.size() != f.categories.size())
          fail(ErrorKind::InvalidArgument, "categorical feature " + f.name + " has duplicate categories");
      }
    }
  }

  std::vector<FeatureSpec> features_;
  std::string label_column_;
  std::string circle_column_;
  std::vector<std::size_t> offsets_;
  std::size_t encoded_width_ = 0;
};

inline FeatureSpec categorical(std::string name, std::vector<std::string> categories) {
  return FeatureSpec{std::move(name), FeatureKind::Categorical, std::move(categories)};
}
inline FeatureSpec numeric(std::string name) { return FeatureSpec{std::move(name), FeatureKind::Numeric, {}}; }

/// The 21-feature credit layout: 16 categorical, 5 numeric.
inline TabularSchema default_credit_schema() {
  const std::vector<std::string> yes_no{"no", "yes"};
  return TabularSchema(
      {
          categorical("business_scale", {"large", "medium", "small", "micro"}),
          categorical("business_nature", {"state_owned", "private", "foreign", "collective"}),
          categorical("company_type", {"manufacturer", "distributor", "retailer", "service", "logistics"}),
          categorical("status", {"normal", "attention", "substandard"}),
          categorical("technological_enterprise", yes_no),
          categorical("government_platform_finance", yes_no),
          categorical("prohibited_industry", yes_no),
          categorical("listed_company", yes_no),
          categorical("small_and_micro_enterprise", yes_no),
          categorical("platform_type", {"none", "core_enterprise", "ecommerce", "logistics"}),
          numeric("years_relationship_with_bank"),
          categorical("bank_early_warning", {"none", "low", "medium", "high"}),
          categorical("guarantee_type", {"credit", "guarantee", "mortgage", "pledge"}),
          categorical("revolving_credit_facility", yes_no),
          categorical("repayment_method", {"bullet", "installment", "interest_first"}),
          categorical("rate_adjustment_frequency", {"fixed", "monthly", "quarterly", "yearly"}),
          categorical("credit_rating", {"AAA", "AA", "A", "BBB", "BB", "B"}),
          numeric("deposit_balance"),
          numeric("average_daily_deposit_balance"),
          numeric("credit_balance"),
          numeric("average_daily_credit_balance"),
      },
      "default", "circle_id");
}

}  // namespace tcnet::data
