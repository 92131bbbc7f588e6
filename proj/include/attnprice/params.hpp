#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "attnprice/numeric.hpp"

namespace attnprice {

// Named matrix blocks packed into one flat vector. Gradients share the layout
// of the parameters they belong to, which keeps Adam, L1 and finite
// differences oblivious to the architecture.
class ParameterSet {
 public:
  struct Block {
    std::string name;
    std::size_t offset;
    std::size_t rows;
    std::size_t cols;
  };

  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    blocks_.push_back({std::move(name), values_.size(), rows, cols});
    values_.resize(values_.size() + rows * cols, 0.0);
    return blocks_.size() - 1;
  }

  std::size_t size() const noexcept { return values_.size(); }
  std::size_t block_count() const noexcept { return blocks_.size(); }
  const Block& block(std::size_t i) const { return blocks_.at(i); }
  const std::vector<Block>& blocks() const noexcept { return blocks_; }

  std::size_t find(std::string_view name) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      if (blocks_[i].name == name) return i;
    throw std::out_of_range("ParameterSet: no block named '" + std::string(name) + "'");
  }

  MutView view(std::size_t i) {
    const auto& b = blocks_[i];
    return {values_.data() + b.offset, b.rows, b.cols};
  }
  ConstView view(std::size_t i) const {
    const auto& b = blocks_[i];
    return {values_.data() + b.offset, b.rows, b.cols};
  }
  std::span<double> vec(std::size_t i) { return view(i).flat(); }
  std::span<const double> vec(std::size_t i) const {
    const auto& b = blocks_[i];
    return {values_.data() + b.offset, b.rows * b.cols};
  }

  std::span<double> flat() noexcept { return values_; }
  std::span<const double> flat() const noexcept { return values_; }

  // Same layout, all zeros.
  ParameterSet zeros_like() const {
    ParameterSet out = *this;
    std::fill(out.values_.begin(), out.values_.end(), 0.0);
    return out;
  }

  void assign(std::span<const double> values) {
    if (values.size() != values_.size()) throw std::invalid_argument("ParameterSet::assign: size mismatch");
    std::copy(values.begin(), values.end(), values_.begin());
  }

  double l1_norm() const {
    double s = 0.0;
    for (double v : values_) s += std::abs(v);
    return s;
  }

  bool same_layout(const ParameterSet& other) const {
    if (blocks_.size() != other.blocks_.size()) return false;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto &a = blocks_[i], &b = other.blocks_[i];
      if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
    }
    return true;
  }

  bool operator==(const ParameterSet& other) const { return same_layout(other) && values_ == other.values_; }

 private:
  std::vector<Block> blocks_;
  std::vector<double> values_;
};

}  // namespace attnprice
