#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "cartvis/error.hpp"

namespace cartvis::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Square-kernel 2-D convolution over HWC images.
struct ConvShape {
  int in_height = 0;
  int in_width = 0;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 2;
  int pad = 1;

  int out_height() const { return (in_height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (in_width + 2 * pad - kernel) / stride + 1; }
  int patch_size() const { return kernel * kernel * in_channels; }
  int in_size() const { return in_height * in_width * in_channels; }
  int out_size() const { return out_height() * out_width() * out_channels; }
};

/// Unfolds `images` HWC inputs into a (patch_size x images*out_h*out_w) matrix.
/// Row order within a patch is (ky, kx, channel); column order is (image, oy, ox).
template <typename Scalar>
void im2col(const ConvShape& s, const Scalar* input, int images, Matrix<Scalar>& cols) {
  const int oh = s.out_height(), ow = s.out_width(), c = s.in_channels;
  cols.resize(s.patch_size(), Eigen::Index(images) * oh * ow);
  Scalar* dst = cols.data();
  for (int n = 0; n < images; ++n) {
    const Scalar* img = input + std::size_t(n) * s.in_size();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        for (int ky = 0; ky < s.kernel; ++ky) {
          const int iy = oy * s.stride - s.pad + ky;
          for (int kx = 0; kx < s.kernel; ++kx, dst += c) {
            const int ix = ox * s.stride - s.pad + kx;
            if (iy < 0 || iy >= s.in_height || ix < 0 || ix >= s.in_width) {
              std::fill(dst, dst + c, Scalar(0));
            } else {
              const Scalar* src = img + (std::size_t(iy) * s.in_width + ix) * c;
              std::copy(src, src + c, dst);
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds patch gradients back onto the inputs.
template <typename Scalar>
void col2im(const ConvShape& s, const Matrix<Scalar>& cols, int images, Scalar* grad_input) {
  const int oh = s.out_height(), ow = s.out_width(), c = s.in_channels;
  std::fill(grad_input, grad_input + std::size_t(images) * s.in_size(), Scalar(0));
  const Scalar* src = cols.data();
  for (int n = 0; n < images; ++n) {
    Scalar* img = grad_input + std::size_t(n) * s.in_size();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        for (int ky = 0; ky < s.kernel; ++ky) {
          const int iy = oy * s.stride - s.pad + ky;
          for (int kx = 0; kx < s.kernel; ++kx, src += c) {
            const int ix = ox * s.stride - s.pad + kx;
            if (iy < 0 || iy >= s.in_height || ix < 0 || ix >= s.in_width) continue;
            Scalar* d = img + (std::size_t(iy) * s.in_width + ix) * c;
            for (int ch = 0; ch < c; ++ch) d[ch] += src[ch];
          }
        }
      }
    }
  }
}

template <typename Derived>
typename Derived::PlainObject sigmoid(const Eigen::ArrayBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  return (Scalar(1) + (-a).exp()).inverse();
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename Scalar, typename Rng>
void init_fan_in(Matrix<Scalar>& m, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = Scalar(dist(rng));
}

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment gradient descent over a fixed list of tensors.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamOptions options) : options_(options) {}

  void step(std::span<Matrix<Scalar>* const> params, std::span<const Matrix<Scalar>* const> grads) {
    if (params.size() != grads.size()) throw Error(ErrorKind::Dimension, "adam: param/grad count mismatch");
    if (first_.empty()) {
      for (auto* p : params) {
        first_.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
        second_.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
      }
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(options_.beta1, double(steps_));
    const double c2 = 1.0 - std::pow(options_.beta2, double(steps_));
    const Scalar b1 = Scalar(options_.beta1), b2 = Scalar(options_.beta2);
    const Scalar lr = Scalar(options_.learning_rate / c1);
    const Scalar inv_c2 = Scalar(1.0 / c2);
    const Scalar eps = Scalar(options_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto g = grads[i]->array();
      first_[i].array() = b1 * first_[i].array() + (Scalar(1) - b1) * g;
      second_[i].array() = b2 * second_[i].array() + (Scalar(1) - b2) * g.square();
      params[i]->array() -= lr * first_[i].array() / ((second_[i].array() * inv_c2).sqrt() + eps);
    }
  }

  const AdamOptions& options() const { return options_; }
  long long steps() const { return steps_; }
  std::vector<Matrix<Scalar>>& first_moments() { return first_; }
  std::vector<Matrix<Scalar>>& second_moments() { return second_; }
  void restore(long long steps, std::vector<Matrix<Scalar>> first, std::vector<Matrix<Scalar>> second) {
    steps_ = steps;
    first_ = std::move(first);
    second_ = std::move(second);
  }

 private:
  AdamOptions options_;
  long long steps_ = 0;
  std::vector<Matrix<Scalar>> first_;
  std::vector<Matrix<Scalar>> second_;
};

/// Global L2 norm over a gradient list.
template <typename Scalar>
double global_norm(std::span<const Matrix<Scalar>* const> grads) {
  double sq = 0.0;
  for (const auto* g : grads) sq += double(g->squaredNorm());
  return std::sqrt(sq);
}

}  // namespace cartvis::nn
