#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "trialign/random.hpp"

namespace trialign {

/// Hidden width of the head for a shared dimension `d_out`.
constexpr std::size_t hidden_width(std::size_t d_out) { return d_out * 3 > 768 ? d_out * 3 : 768; }

enum class Mode { train, eval };

/// Two-layer projection head:
///   h = LayerNorm(W1 x + b1)   (affine, eps 1e-5)
///   u = Dropout(GELU(h))       (exact erf GELU, inverted dropout)
///   z = W2 u + b2
/// Rows of a batch are samples. `T` is float for training and double for
/// gradient verification.
template <typename T>
struct ProjectionHead {
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  Matrix w1;  // m x d_in
  Vector b1;
  Vector ln_gain;
  Vector ln_bias;
  Matrix w2;  // d_out x m
  Vector b2;
  double dropout_rate = 0.0;
  /// Bumped by every parameter update; caches record it to detect staleness.
  std::uint64_t version = 0;

  [[nodiscard]] std::size_t d_in() const { return static_cast<std::size_t>(w1.cols()); }
  [[nodiscard]] std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }
  [[nodiscard]] std::size_t d_out() const { return static_cast<std::size_t>(w2.rows()); }
  [[nodiscard]] std::size_t parameter_count() const;

  template <typename U>
  [[nodiscard]] ProjectionHead<U> cast() const {
    ProjectionHead<U> out;
    out.w1 = w1.template cast<U>();
    out.b1 = b1.template cast<U>();
    out.ln_gain = ln_gain.template cast<U>();
    out.ln_bias = ln_bias.template cast<U>();
    out.w2 = w2.template cast<U>();
    out.b2 = b2.template cast<U>();
    out.dropout_rate = dropout_rate;
    return out;
  }
};

template <typename T>
struct HeadGradients {
  typename ProjectionHead<T>::Matrix w1;
  typename ProjectionHead<T>::Vector b1;
  typename ProjectionHead<T>::Vector ln_gain;
  typename ProjectionHead<T>::Vector ln_bias;
  typename ProjectionHead<T>::Matrix w2;
  typename ProjectionHead<T>::Vector b2;

  static HeadGradients zeros_like(const ProjectionHead<T>& head);
  HeadGradients& operator+=(const HeadGradients& other);
  HeadGradients& operator*=(T scale);
};

/// Intermediates kept by `forward` for `backward`.
template <typename T>
struct ForwardCache {
  using Matrix = typename ProjectionHead<T>::Matrix;
  using Vector = typename ProjectionHead<T>::Vector;

  Matrix x;
  Matrix normalized;  // (pre - mean) * inv_std, before the affine step
  Vector inv_std;     // per row
  Matrix h;           // LayerNorm output
  Matrix u;           // after GELU and dropout
  Matrix mask;        // dropout multipliers; empty in eval mode
  std::uint64_t head_version = 0;
  bool valid = false;
};

template <typename T>
struct ForwardResult {
  typename ProjectionHead<T>::Matrix z;
  ForwardCache<T> cache;
};

template <typename T>
struct BackwardResult {
  HeadGradients<T> grads;
  typename ProjectionHead<T>::Matrix dx;
};

/// Weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and LayerNorm
/// shift zero, LayerNorm gain one. Deterministic in `seed`.
template <typename T>
ProjectionHead<T> init_head(std::size_t d_in, std::size_t d_out, double dropout_rate,
                            std::uint64_t seed);

/// Throws ShapeError when `x.cols() != d_in`, ConfigError when train mode
/// with a positive dropout rate has no rng.
template <typename T>
ForwardResult<T> forward(const ProjectionHead<T>& head,
                         const typename ProjectionHead<T>::Matrix& x, Mode mode,
                         Rng* rng = nullptr);

/// Throws StateError if `cache` was not produced by `head` at its current version.
template <typename T>
BackwardResult<T> backward(const ProjectionHead<T>& head, const ForwardCache<T>& cache,
                           const typename ProjectionHead<T>::Matrix& dz);

inline constexpr double kLayerNormEps = 1e-5;

double gelu(double x);
double gelu_derivative(double x);

}  // namespace trialign
