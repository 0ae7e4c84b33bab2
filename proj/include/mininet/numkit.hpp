#pragma once

// Dense numeric kernel shared by the model, the losses and the gradient
// oracle. Storage follows the scalar template parameter (float for training
// and checkpoints, double for the finite-difference oracle); reductions that
// feed probabilities accumulate in double.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mininet/error.hpp"

namespace mininet {

using Index = Eigen::Index;

template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Row-major so that a matrix of instance features stores one instance per row.
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using DenseVector = Vector<float>;
using DenseMatrix = Matrix<float>;

inline std::string shape_string(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <class Derived>
std::string shape_of(const Eigen::MatrixBase<Derived>& m) {
  return shape_string(m.rows(), m.cols());
}

template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

template <class Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, std::string_view what) {
  if (!m.allFinite()) {
    throw NumericError(std::string(what) + ": non-finite value");
  }
}

// W*x + b, dot products accumulated in double.
template <class T>
Vector<T> linear(const Matrix<T>& w, const Vector<T>& b, const Vector<T>& x) {
  if (w.cols() != x.size() || w.rows() != b.size()) {
    throw ShapeError("linear: W is " + shape_of(w) + ", b is " +
                     shape_of(b) + ", x is " + shape_of(x));
  }
  Vector<T> y(w.rows());
  for (Index r = 0; r < w.rows(); ++r) {
    double acc = static_cast<double>(b[r]);
    for (Index c = 0; c < w.cols(); ++c) {
      acc += static_cast<double>(w(r, c)) * static_cast<double>(x[c]);
    }
    y[r] = static_cast<T>(acc);
  }
  return y;
}

// Row-wise affine map: out.row(i) = W * x.row(i) + b. This is the batched
// form of linear() used on bags, one instance per row. The product runs in
// double so a row's result does not depend on where it sits in the batch
// (float GEMM kernels round edge rows differently).
template <class T>
Matrix<T> linear_rows(const Matrix<T>& x, const Matrix<T>& w, const Vector<T>& b) {
  if (w.cols() != x.cols() || w.rows() != b.size()) {
    throw ShapeError("linear_rows: X is " + shape_of(x) + ", W is " +
                     shape_of(w) + ", b is " + shape_of(b));
  }
  Matrix<double> y(x.rows(), w.rows());
  if constexpr (std::is_same_v<T, double>) {
    y.noalias() = x * w.transpose();
  } else {
    y.noalias() = x.template cast<double>() * w.template cast<double>().transpose();
  }
  y.rowwise() += b.template cast<double>().transpose();
  if constexpr (std::is_same_v<T, double>) {
    return y;
  } else {
    return y.template cast<T>();
  }
}

template <class Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.cwiseMax(Scalar(0)).eval();
}

template <class Derived>
void relu_inplace(Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  x = x.cwiseMax(Scalar(0));
}

// exp(x_i - max x) / sum_t exp(x_t - max x). The max is subtracted
// unconditionally; the normalizer is summed in double.
template <class T>
Vector<T> stable_softmax(const Vector<T>& x) {
  if (x.size() == 0) {
    throw ShapeError("stable_softmax: empty input");
  }
  const double top = static_cast<double>(x.maxCoeff());
  std::vector<double> e(static_cast<std::size_t>(x.size()));
  double sum = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    e[static_cast<std::size_t>(i)] = std::exp(static_cast<double>(x[i]) - top);
    sum += e[static_cast<std::size_t>(i)];
  }
  Vector<T> out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    out[i] = static_cast<T>(e[static_cast<std::size_t>(i)] / sum);
  }
  return out;
}

// A named, flat window onto one parameter tensor.
template <class T>
struct TensorView {
  std::string name;
  std::span<T> values;
  Index rows = 0;
  Index cols = 0;
};

// Anything whose learnable scalars can be enumerated tensor by tensor, and
// which names the type that holds its gradient.
template <class P>
concept ParameterContainer = requires(P& p, const P& cp) {
  typename P::scalar_type;
  typename P::gradient_type;
  { p.views() } -> std::same_as<std::vector<TensorView<typename P::scalar_type>>>;
  { P::gradient_type::zeros_like(cp) } -> std::same_as<typename P::gradient_type>;
};

// Per-parameter step multiplier: the probe at theta uses h * max(1, |theta|).
inline constexpr double kDefaultFiniteDiffStep = 1e-3;

// Maximum number of step halvings when a probe leaves the smooth piece.
inline constexpr int kMaxStepHalvings = 40;

namespace detail {
struct NoRegime {
  template <class P>
  int operator()(const P&) const {
    return 0;
  }
};
}  // namespace detail

// Central differences (loss(theta + s) - loss(theta - s)) / (2 s) for every
// scalar in params, with s = h * max(1, |theta|). loss_fn must be a pure
// function of the parameter container.
//
// For piecewise-smooth losses, regime_fn maps parameters to a comparable
// signature of the active piece (activation masks, selected indices). A
// probe whose signature differs from the unperturbed one is retried with
// half the step, so the estimate is the derivative of the piece that
// contains theta.
template <ParameterContainer P, class LossFn, class RegimeFn = detail::NoRegime>
  requires std::invocable<LossFn&, const P&> && std::invocable<RegimeFn&, const P&>
typename P::gradient_type finite_diff_gradient(LossFn&& loss_fn, const P& params,
                                               double h = kDefaultFiniteDiffStep,
                                               RegimeFn&& regime_fn = {}) {
  using T = typename P::scalar_type;
  if (!(h > 0.0)) {
    throw ConfigError("finite_diff_gradient: step must be positive");
  }
  auto grad = P::gradient_type::zeros_like(params);
  P probe = params;
  const auto base_regime = std::invoke(regime_fn, params);
  auto probe_views = probe.views();
  auto grad_views = grad.views();
  for (std::size_t t = 0; t < probe_views.size(); ++t) {
    auto& pv = probe_views[t];
    auto& gv = grad_views[t];
    for (std::size_t i = 0; i < pv.values.size(); ++i) {
      const T original = pv.values[i];
      double step = h * std::max(1.0, std::abs(static_cast<double>(original)));
      T plus{}, minus{};
      double lp = 0.0, lm = 0.0;
      for (int attempt = 0;; ++attempt) {
        plus = static_cast<T>(static_cast<double>(original) + step);
        minus = static_cast<T>(static_cast<double>(original) - step);
        pv.values[i] = plus;
        lp = static_cast<double>(std::invoke(loss_fn, std::as_const(probe)));
        const bool plus_same = std::invoke(regime_fn, std::as_const(probe)) == base_regime;
        pv.values[i] = minus;
        lm = static_cast<double>(std::invoke(loss_fn, std::as_const(probe)));
        const bool minus_same = std::invoke(regime_fn, std::as_const(probe)) == base_regime;
        pv.values[i] = original;
        if ((plus_same && minus_same) || attempt == kMaxStepHalvings) {
          break;
        }
        step *= 0.5;
      }
      if (!std::isfinite(lp) || !std::isfinite(lm)) {
        throw NumericError("finite_diff_gradient: non-finite loss probing " + pv.name +
                           "[" + std::to_string(i) + "]");
      }
      gv.values[i] = static_cast<T>((lp - lm) /
                                    (static_cast<double>(plus) - static_cast<double>(minus)));
    }
  }
  return grad;
}

}  // namespace mininet
