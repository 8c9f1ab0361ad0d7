#pragma once

#include <functional>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "tcnet/data/dataset.hpp"
#include "tcnet/error.hpp"
#include "tcnet/matrix.hpp"

namespace tcnet::testing {

inline ::testing::AssertionResult raises(ErrorKind kind, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    if (e.kind() == kind) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure() << "raised " << to_string(e.kind()) << " instead of " << to_string(kind)
                                         << ": " << e.what();
  }
  return ::testing::AssertionFailure() << "nothing raised, expected " << to_string(kind);
}

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.values()) v = n(rng);
  return m;
}

// Three categoricals and two numerics.
inline std::shared_ptr<const data::TabularSchema> toy_schema() {
  using namespace data;
  return std::make_shared<const TabularSchema>(
      TabularSchema({categorical("color", {"red", "green", "blue"}), numeric("income"),
                     categorical("size", {"s", "m"}), numeric("age"), categorical("kind", {"a", "b", "c", "d"})},
                    "label", "circle"));
}

inline data::DomainDataset toy_dataset(std::size_t rows, std::uint64_t seed, double positive_rate = 0.3) {
  auto schema = toy_schema();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix raw(rows, schema->feature_count());
  std::vector<int> labels(rows);
  std::vector<std::string> circles(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    raw(r, 0) = static_cast<double>(rng() % 3);
    raw(r, 1) = 50.0 + 10.0 * n(rng);
    raw(r, 2) = static_cast<double>(rng() % 2);
    raw(r, 3) = 40.0 + 5.0 * n(rng);
    raw(r, 4) = static_cast<double>(rng() % 4);
    labels[r] = r < static_cast<std::size_t>(positive_rate * static_cast<double>(rows)) ? 1 : 0;
    circles[r] = "c" + std::to_string(r % 4);
  }
  data::DomainDataset d(schema, raw, labels, circles);
  data::encode(d);
  return d;
}

}  // namespace tcnet::testing
