#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace dgpvae {

// Dense row-major tensor of 64-bit floats. Shapes are explicit; the value
// count always equals the product of the shape.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<double> v);

  static Tensor zeros(std::vector<std::size_t> s);
  static Tensor full(std::vector<std::size_t> s, double value);
  static Tensor scalar(double value);
  static Tensor from_vector(std::vector<double> v);
  static Tensor from_matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  std::size_t rank() const { return shape.size(); }
  std::size_t numel() const { return values.size(); }
  std::size_t dim(std::size_t i) const;

  double& operator()(std::size_t i) { return values[i]; }
  double operator()(std::size_t i) const { return values[i]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * shape[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * shape[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return values[(i * shape[1] + j) * shape[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return values[(i * shape[1] + j) * shape[2] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return values[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return values[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

std::string shape_to_string(const std::vector<std::size_t>& shape);

}  // namespace dgpvae
