#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "recap/rng.hpp"

namespace recap::ag {

// Dense row-major tensor of doubles. Rank 0 (empty shape) is a scalar with
// one element. Construction validates that the element count matches the
// shape product and that every entry is finite; NaN/Inf are rejected.
class Tensor {
 public:
  Tensor();  // rank-0 scalar holding 0.0
  Tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
  // Entries i.i.d. uniform in (-scale, scale).
  static Tensor uniform(std::vector<int> shape, Rng& rng, double scale, bool requires_grad = true);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool is_scalar() const { return data_.size() == 1; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  // Rank-2 element access.
  double at2(int r, int c) const { return data_[static_cast<size_t>(r) * dim(1) + c]; }
  double& at2(int r, int c) { return data_[static_cast<size_t>(r) * dim(1) + c]; }

  double scalar_value() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

  bool requires_grad = false;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

// Throws NumericError naming `op` if any entry of `data` is non-finite.
void check_finite(const std::vector<double>& data, const char* op);

}  // namespace recap::ag
