#include "trialign/projection_head.hpp"

#include <cmath>
#include <numbers>

#include "trialign/errors.hpp"

namespace trialign {
namespace {

template <typename T>
T gelu_t(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

// d/dx [x * Phi(x)] = Phi(x) + x * phi(x)
template <typename T>
T gelu_derivative_t(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  return cdf + x * pdf;
}

}  // namespace

double gelu(double x) { return gelu_t(x); }
double gelu_derivative(double x) { return gelu_derivative_t(x); }

template <typename T>
std::size_t ProjectionHead<T>::parameter_count() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + ln_gain.size() + ln_bias.size() +
                                  w2.size() + b2.size());
}

template <typename T>
HeadGradients<T> HeadGradients<T>::zeros_like(const ProjectionHead<T>& head) {
  HeadGradients g;
  g.w1 = ProjectionHead<T>::Matrix::Zero(head.w1.rows(), head.w1.cols());
  g.b1 = ProjectionHead<T>::Vector::Zero(head.b1.size());
  g.ln_gain = ProjectionHead<T>::Vector::Zero(head.ln_gain.size());
  g.ln_bias = ProjectionHead<T>::Vector::Zero(head.ln_bias.size());
  g.w2 = ProjectionHead<T>::Matrix::Zero(head.w2.rows(), head.w2.cols());
  g.b2 = ProjectionHead<T>::Vector::Zero(head.b2.size());
  return g;
}

template <typename T>
HeadGradients<T>& HeadGradients<T>::operator+=(const HeadGradients& other) {
  w1 += other.w1;
  b1 += other.b1;
  ln_gain += other.ln_gain;
  ln_bias += other.ln_bias;
  w2 += other.w2;
  b2 += other.b2;
  return *this;
}

template <typename T>
HeadGradients<T>& HeadGradients<T>::operator*=(T scale) {
  w1 *= scale;
  b1 *= scale;
  ln_gain *= scale;
  ln_bias *= scale;
  w2 *= scale;
  b2 *= scale;
  return *this;
}

template <typename T>
ProjectionHead<T> init_head(std::size_t d_in, std::size_t d_out, double dropout_rate,
                            std::uint64_t seed) {
  if (d_in == 0 || d_out == 0) throw ConfigError("projection head dimensions must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1)");
  }
  const auto m = static_cast<Eigen::Index>(hidden_width(d_out));
  const auto in = static_cast<Eigen::Index>(d_in);
  const auto out = static_cast<Eigen::Index>(d_out);
  Rng rng(seed);
  auto fill = [&rng](auto& mat, double bound) {
    for (Eigen::Index c = 0; c < mat.cols(); ++c) {
      for (Eigen::Index r = 0; r < mat.rows(); ++r) mat(r, c) = static_cast<T>(rng.uniform(-bound, bound));
    }
  };
  ProjectionHead<T> head;
  head.w1.resize(m, in);
  fill(head.w1, 1.0 / std::sqrt(static_cast<double>(d_in)));
  head.w2.resize(out, m);
  fill(head.w2, 1.0 / std::sqrt(static_cast<double>(m)));
  head.b1 = ProjectionHead<T>::Vector::Zero(m);
  head.ln_gain = ProjectionHead<T>::Vector::Ones(m);
  head.ln_bias = ProjectionHead<T>::Vector::Zero(m);
  head.b2 = ProjectionHead<T>::Vector::Zero(out);
  head.dropout_rate = dropout_rate;
  return head;
}

template <typename T>
ForwardResult<T> forward(const ProjectionHead<T>& head,
                         const typename ProjectionHead<T>::Matrix& x, Mode mode, Rng* rng) {
  using Matrix = typename ProjectionHead<T>::Matrix;
  if (static_cast<std::size_t>(x.cols()) != head.d_in()) {
    throw ShapeError("projection head expects " + std::to_string(head.d_in()) +
                     " input features, got " + std::to_string(x.cols()));
  }
  const bool use_dropout = mode == Mode::train && head.dropout_rate > 0.0;
  if (use_dropout && rng == nullptr) throw ConfigError("train-mode forward with dropout needs an rng");

  const Eigen::Index n = x.rows();
  const Eigen::Index m = head.w1.rows();
  ForwardResult<T> out;
  auto& cache = out.cache;
  cache.x = x;

  Matrix pre = x * head.w1.transpose();
  pre.rowwise() += head.b1.transpose();

  cache.normalized.resize(n, m);
  cache.inv_std.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = pre.row(i).mean();
    const T var = (pre.row(i).array() - mean).square().mean();
    const T inv_std = T(1) / std::sqrt(var + T(kLayerNormEps));
    cache.inv_std(i) = inv_std;
    cache.normalized.row(i) = (pre.row(i).array() - mean) * inv_std;
  }
  cache.h = (cache.normalized.array().rowwise() * head.ln_gain.transpose().array()).rowwise() +
            head.ln_bias.transpose().array();

  cache.u = cache.h.unaryExpr([](T v) { return gelu_t(v); });
  if (use_dropout) {
    const T keep_scale = T(1.0 / (1.0 - head.dropout_rate));
    cache.mask.resize(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        cache.mask(i, j) = rng->uniform() < head.dropout_rate ? T(0) : keep_scale;
      }
    }
    cache.u.array() *= cache.mask.array();
  }

  out.z = cache.u * head.w2.transpose();
  out.z.rowwise() += head.b2.transpose();
  cache.head_version = head.version;
  cache.valid = true;
  return out;
}

template <typename T>
BackwardResult<T> backward(const ProjectionHead<T>& head, const ForwardCache<T>& cache,
                           const typename ProjectionHead<T>::Matrix& dz) {
  using Matrix = typename ProjectionHead<T>::Matrix;
  using Vector = typename ProjectionHead<T>::Vector;
  if (!cache.valid || cache.head_version != head.version ||
      cache.h.cols() != head.w1.rows() || cache.x.cols() != head.w1.cols()) {
    throw StateError("forward cache does not belong to this head state");
  }
  if (dz.rows() != cache.x.rows() || static_cast<std::size_t>(dz.cols()) != head.d_out()) {
    throw ShapeError("upstream gradient has shape " + std::to_string(dz.rows()) + "x" +
                     std::to_string(dz.cols()) + ", expected " + std::to_string(cache.x.rows()) +
                     "x" + std::to_string(head.d_out()));
  }
  const Eigen::Index m = head.w1.rows();

  BackwardResult<T> out;
  auto& g = out.grads;
  g.w2 = dz.transpose() * cache.u;
  g.b2 = dz.colwise().sum().transpose();

  Matrix dh = dz * head.w2;
  if (cache.mask.size() != 0) dh.array() *= cache.mask.array();
  dh.array() *= cache.h.unaryExpr([](T v) { return gelu_derivative_t(v); }).array();

  g.ln_gain = (dh.array() * cache.normalized.array()).colwise().sum().transpose();
  g.ln_bias = dh.colwise().sum().transpose();

  // LayerNorm input gradient, full Jacobian through mean and variance.
  const Matrix dn = dh.array().rowwise() * head.ln_gain.transpose().array();
  Matrix dpre(dn.rows(), m);
  for (Eigen::Index i = 0; i < dn.rows(); ++i) {
    const T mean_dn = dn.row(i).mean();
    const T mean_dn_n = (dn.row(i).array() * cache.normalized.row(i).array()).mean();
    dpre.row(i) = cache.inv_std(i) *
                  (dn.row(i).array() - mean_dn - cache.normalized.row(i).array() * mean_dn_n);
  }

  g.w1 = dpre.transpose() * cache.x;
  g.b1 = Vector(dpre.colwise().sum().transpose());
  out.dx = dpre * head.w1;
  return out;
}

template struct ProjectionHead<float>;
template struct ProjectionHead<double>;
template struct HeadGradients<float>;
template struct HeadGradients<double>;
template ProjectionHead<float> init_head<float>(std::size_t, std::size_t, double, std::uint64_t);
template ProjectionHead<double> init_head<double>(std::size_t, std::size_t, double, std::uint64_t);
template ForwardResult<float> forward<float>(const ProjectionHead<float>&,
                                             const ProjectionHead<float>::Matrix&, Mode, Rng*);
template ForwardResult<double> forward<double>(const ProjectionHead<double>&,
                                               const ProjectionHead<double>::Matrix&, Mode, Rng*);
template BackwardResult<float> backward<float>(const ProjectionHead<float>&,
                                               const ForwardCache<float>&,
                                               const ProjectionHead<float>::Matrix&);
template BackwardResult<double> backward<double>(const ProjectionHead<double>&,
                                                 const ForwardCache<double>&,
                                                 const ProjectionHead<double>::Matrix&);

}  // namespace trialign
