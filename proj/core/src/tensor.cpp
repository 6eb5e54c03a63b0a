#include "recap/tensor.hpp"

#include <cmath>
#include <sstream>

#include "recap/errors.hpp"

namespace recap::ag {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void check_finite(const std::vector<double>& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value");
    }
  }
}

Tensor::Tensor() : shape_{}, data_{0.0} {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data, bool rg)
    : requires_grad(rg), shape_(std::move(shape)), data_(std::move(data)) {
  for (int d : shape_) {
    if (d <= 0) {
      throw DimError("tensor: non-positive dimension in " + shape_to_string(shape_));
    }
  }
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw DimError("tensor: shape " + shape_to_string(shape_) + " does not match " +
                   std::to_string(data_.size()) + " elements");
  }
  check_finite(data_, "tensor");
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<int> shape, bool rg) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0), rg);
}

Tensor Tensor::full(std::vector<int> shape, double v, bool rg) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), v), rg);
}

Tensor Tensor::uniform(std::vector<int> shape, Rng& rng, double scale, bool rg) {
  auto n = shape_numel(shape);
  std::vector<double> data(static_cast<size_t>(n));
  for (auto& v : data) v = rng.uniform(-scale, scale);
  return Tensor(std::move(shape), std::move(data), rg);
}

double Tensor::scalar_value() const {
  if (!is_scalar()) {
    throw UsageError("scalar_value: tensor of shape " + shape_str() + " is not scalar");
  }
  return data_[0];
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

}  // namespace recap::ag
