#include "dgpvae/tensor.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dgpvae {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
  if (shape_product(shape) != values.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_to_string(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> s) {
  std::size_t n = shape_product(s);
  return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> s, double value) {
  std::size_t n = shape_product(s);
  return Tensor(std::move(s), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::from_vector(std::vector<double> v) {
  std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::from_matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= shape.size()) {
    throw std::out_of_range("Tensor::dim: axis " + std::to_string(i) + " out of range for shape " +
                            shape_to_string(shape));
  }
  return shape[i];
}

bool Tensor::all_finite() const {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  if (shape.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out;
}

}  // namespace dgpvae
