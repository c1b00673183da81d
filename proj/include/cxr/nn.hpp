#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cxr/random.hpp"

// Minimal dense kernels for the toy forward passes. Everything is double
// precision, single threaded and evaluated in a fixed order so that outputs
// are reproducible bit for bit for a given seed.
namespace cxr::nn {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Channel-major feature grid (C x H x W).
struct Tensor3 {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
};

/// Uniform(-limit, limit) with limit = sqrt(6 / fan_in).
Matrix he_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, DeterministicRng& rng);
std::vector<double> small_uniform(std::size_t n, double limit, DeterministicRng& rng);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_transposed(const Matrix& a, const Matrix& b);  // a * b^T
void add_row_bias(Matrix& m, const std::vector<double>& bias);
void layer_norm_rows(Matrix& m, double eps = 1e-5);
void softmax_rows(Matrix& m);
void gelu_inplace(Matrix& m);
std::vector<double> softmax(const std::vector<double>& logits);
double sigmoid(double x);

/// 2-D convolution with a square odd kernel, zero "same" padding, stride 1.
/// weights: out x (in * k * k), bias: out.
struct Conv2d {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 3;
  std::vector<double> weights;
  std::vector<double> bias;

  static Conv2d make(std::size_t in, std::size_t out, std::size_t kernel, DeterministicRng& rng);
  std::size_t parameter_count() const { return weights.size() + bias.size(); }
  Tensor3 operator()(const Tensor3& x) const;
};

void relu_inplace(Tensor3& t);
Tensor3 max_pool2(const Tensor3& t);
Tensor3 upsample2_nearest(const Tensor3& t);
Tensor3 concat_channels(const std::vector<const Tensor3*>& parts);

}  // namespace cxr::nn
