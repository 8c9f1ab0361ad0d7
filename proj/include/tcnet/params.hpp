#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "tcnet/matrix.hpp"
#include "tcnet/tape.hpp"

namespace tcnet {

/// Named, insertion-ordered collection of learnable arrays.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Matrix value;
  };

  Matrix& add(std::string name, Matrix value) {
    if (index_.contains(name)) fail(ErrorKind::InvalidArgument, "duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value)});
    return entries_.back().value;
  }

  bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }

  const Matrix& at(std::string_view name) const { return entries_[index_of(name)].value; }
  Matrix& at(std::string_view name) { return entries_[index_of(name)].value; }

  std::size_t index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) fail(ErrorKind::InvalidArgument, "unknown parameter " + std::string(name));
    return it->second;
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      if (a.entries_[i].name != b.entries_[i].name || !(a.entries_[i].value == b.entries_[i].value))
        return false;
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Parameters bound as leaves on one tape, addressed by the same names.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const ParamStore& store, bool requires_grad = true) : store_(&store) {
    vars_.reserve(store.size());
    for (const auto& e : store.entries()) vars_.push_back(tape.leaf(e.value, requires_grad));
  }

  ad::Var operator[](std::string_view name) const { return vars_[store_->index_of(name)]; }
  const std::vector<ad::Var>& vars() const noexcept { return vars_; }
  const ParamStore& store() const noexcept { return *store_; }

  /// Copies the tape gradients out in store order.
  ParamStore gradients() const {
    ParamStore g;
    for (std::size_t i = 0; i < vars_.size(); ++i) g.add(store_->entries()[i].name, vars_[i].grad());
    return g;
  }

 private:
  const ParamStore* store_;
  std::vector<ad::Var> vars_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline Matrix glorot_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

}  // namespace tcnet
