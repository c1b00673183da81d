#include "cxr/nn.hpp"

#include <algorithm>
#include <cmath>

#include "cxr/error.hpp"

namespace cxr::nn {

Matrix he_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, DeterministicRng& rng) {
  Matrix m(rows, cols);
  const double limit = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (double& v : m.data) v = rng.uniform(-limit, limit);
  return m;
}

std::vector<double> small_uniform(std::size_t n, double limit, DeterministicRng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-limit, limit);
  return v;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw Error(Errc::ShapeMismatch, "matmul inner dimensions differ");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double av = a(i, k);
      const double* brow = &b.data[k * b.cols];
      double* orow = &out.data[i * out.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw Error(Errc::ShapeMismatch, "matmul_transposed dimensions differ");
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.rows; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(j, k);
      out(i, j) = s;
    }
  }
  return out;
}

void add_row_bias(Matrix& m, const std::vector<double>& bias) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) m(i, j) += bias[j];
  }
}

void layer_norm_rows(Matrix& m, double eps) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) mean += m(i, j);
    mean /= static_cast<double>(m.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) var += (m(i, j) - mean) * (m(i, j) - mean);
    var /= static_cast<double>(m.cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = (m(i, j) - mean) * inv;
  }
}

void softmax_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    double mx = m(i, 0);
    for (std::size_t j = 1; j < m.cols; ++j) mx = std::max(mx, m(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      m(i, j) = std::exp(m(i, j) - mx);
      sum += m(i, j);
    }
    for (std::size_t j = 0; j < m.cols; ++j) m(i, j) /= sum;
  }
}

void gelu_inplace(Matrix& m) {
  for (double& v : m.data) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
}

std::vector<double> softmax(const std::vector<double>& logits) {
  Matrix m(1, logits.size());
  m.data = logits;
  softmax_rows(m);
  return m.data;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Conv2d Conv2d::make(std::size_t in, std::size_t out, std::size_t kernel, DeterministicRng& rng) {
  Conv2d c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  const std::size_t fan_in = in * kernel * kernel;
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  c.weights.resize(out * fan_in);
  for (double& w : c.weights) w = rng.uniform(-limit, limit);
  c.bias = small_uniform(out, 0.05, rng);
  return c;
}

Tensor3 Conv2d::operator()(const Tensor3& x) const {
  if (x.channels != in) throw Error(Errc::ShapeMismatch, "conv input channels differ from layer");
  const std::size_t H = x.height, W = x.width;
  const int half = static_cast<int>(kernel / 2);
  Tensor3 y(out, H, W);
  const std::size_t kk = kernel * kernel;
  for (std::size_t o = 0; o < out; ++o) {
    double* yplane = &y.data[o * H * W];
    std::fill(yplane, yplane + H * W, bias[o]);
    for (std::size_t c = 0; c < in; ++c) {
      const double* xplane = &x.data[c * H * W];
      const double* wk = &weights[(o * in + c) * kk];
      for (int ky = 0; ky < static_cast<int>(kernel); ++ky) {
        for (int kx = 0; kx < static_cast<int>(kernel); ++kx) {
          const double w = wk[ky * kernel + kx];
          const int dy = ky - half;
          const int dx = kx - half;
          const std::size_t y0 = static_cast<std::size_t>(std::max(0, -dy));
          const std::size_t y1 = static_cast<std::size_t>(std::min<int>(static_cast<int>(H), static_cast<int>(H) - dy));
          const std::size_t x0 = static_cast<std::size_t>(std::max(0, -dx));
          const std::size_t x1 = static_cast<std::size_t>(std::min<int>(static_cast<int>(W), static_cast<int>(W) - dx));
          for (std::size_t yy = y0; yy < y1; ++yy) {
            const double* xrow = xplane + (yy + dy) * W;
            double* yrow = yplane + yy * W;
            for (std::size_t xx = x0; xx < x1; ++xx) yrow[xx] += w * xrow[xx + dx];
          }
        }
      }
    }
  }
  return y;
}

void relu_inplace(Tensor3& t) {
  for (double& v : t.data) v = std::max(v, 0.0);
}

Tensor3 max_pool2(const Tensor3& t) {
  if (t.height % 2 != 0 || t.width % 2 != 0) throw Error(Errc::ShapeMismatch, "max_pool2 needs even dimensions");
  Tensor3 out(t.channels, t.height / 2, t.width / 2);
  for (std::size_t c = 0; c < t.channels; ++c) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) {
        out.at(c, y, x) = std::max({t.at(c, 2 * y, 2 * x), t.at(c, 2 * y, 2 * x + 1), t.at(c, 2 * y + 1, 2 * x),
                                    t.at(c, 2 * y + 1, 2 * x + 1)});
      }
    }
  }
  return out;
}

Tensor3 upsample2_nearest(const Tensor3& t) {
  Tensor3 out(t.channels, t.height * 2, t.width * 2);
  for (std::size_t c = 0; c < t.channels; ++c) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) out.at(c, y, x) = t.at(c, y / 2, x / 2);
    }
  }
  return out;
}

Tensor3 concat_channels(const std::vector<const Tensor3*>& parts) {
  if (parts.empty()) return {};
  const std::size_t H = parts.front()->height, W = parts.front()->width;
  std::size_t channels = 0;
  for (const Tensor3* p : parts) {
    if (p->height != H || p->width != W) throw Error(Errc::ShapeMismatch, "concat spatial dimensions differ");
    channels += p->channels;
  }
  Tensor3 out(channels, H, W);
  auto it = out.data.begin();
  for (const Tensor3* p : parts) it = std::copy(p->data.begin(), p->data.end(), it);
  return out;
}

}  // namespace cxr::nn
