#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "glmfit/linalg.hpp"

namespace glmfit {

/// A link g = grad(Phi) bundled with its potential and constants.
///
/// `lipschitz` is L in ||g(u) - g(v)|| <= L ||u - v||, `strong_mono` is mu in
/// <g(u) - g(v), u - v> >= mu ||u - v||^2 (0 when no such mu > 0 exists).
/// The row-batch members are optional fast paths over an n x k score matrix.
struct LinkSpec {
  std::string name;
  std::function<double(const Vector&)> phi;
  std::function<Vector(const Vector&)> grad;
  double lipschitz = 1.0;
  double strong_mono = 0.0;
  std::function<Vector(const Matrix&)> phi_rows_fn;
  std::function<Matrix(const Matrix&)> grad_rows_fn;

  /// kappa = L / mu; infinite when the link is not strongly monotone.
  double condition() const {
    return strong_mono > 0.0 ? lipschitz / strong_mono : std::numeric_limits<double>::infinity();
  }

  Vector phi_rows(const Matrix& u) const {
    if (phi_rows_fn) return phi_rows_fn(u);
    Vector out(u.rows());
    for (Index i = 0; i < u.rows(); ++i) out(i) = phi(u.row(i).transpose());
    return out;
  }

  Matrix grad_rows(const Matrix& u) const {
    if (grad_rows_fn) return grad_rows_fn(u);
    Matrix out(u.rows(), u.cols());
    for (Index i = 0; i < u.rows(); ++i) out.row(i) = grad(u.row(i).transpose()).transpose();
    return out;
  }
};

/// Softmax with max subtraction; strictly positive and sums to one on finite input.
inline Vector softmax_link(const Vector& u) {
  detail::require(u.size() >= 1, "softmax_link: empty input");
  const double m = u.maxCoeff();
  Vector e = (u.array() - m).exp().matrix();
  return e / e.sum();
}

/// log-sum-exp, the potential whose gradient is softmax.
inline double log_sum_exp(const Vector& u) {
  const double m = u.maxCoeff();
  return m + std::log((u.array() - m).exp().sum());
}

namespace detail {

inline Matrix softmax_rows(const Matrix& u) {
  Matrix out(u.rows(), u.cols());
  for (Index i = 0; i < u.rows(); ++i) {
    const double m = u.row(i).maxCoeff();
    out.row(i) = (u.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

inline Vector log_sum_exp_rows(const Matrix& u) {
  Vector out(u.rows());
  for (Index i = 0; i < u.rows(); ++i) {
    const double m = u.row(i).maxCoeff();
    out(i) = m + std::log((u.row(i).array() - m).exp().sum());
  }
  return out;
}

}  // namespace detail

/// Phi(u) = 0.5 ||u||^2, g = id. L = mu = 1, so preconditioned updates are
/// exact least squares.
inline LinkSpec identity_link() {
  LinkSpec link;
  link.name = "identity";
  link.phi = [](const Vector& u) { return 0.5 * u.squaredNorm(); };
  link.grad = [](const Vector& u) { return u; };
  link.lipschitz = 1.0;
  link.strong_mono = 1.0;
  link.phi_rows_fn = [](const Matrix& u) { return Vector(0.5 * u.rowwise().squaredNorm()); };
  link.grad_rows_fn = [](const Matrix& u) { return u; };
  return link;
}

/// Multinomial logit: Phi = log-sum-exp, g = softmax. L = 1 by default; the
/// tighter L = 1/2 (Gershgorin bound on diag(p) - p p^T) is opt-in.
inline LinkSpec softmax_link_spec(bool half_lipschitz = false) {
  LinkSpec link;
  link.name = "softmax";
  link.phi = [](const Vector& u) { return log_sum_exp(u); };
  link.grad = [](const Vector& u) { return softmax_link(u); };
  link.lipschitz = half_lipschitz ? 0.5 : 1.0;
  link.strong_mono = 0.0;
  link.phi_rows_fn = detail::log_sum_exp_rows;
  link.grad_rows_fn = detail::softmax_rows;
  return link;
}

/// Resolves "identity"/"linear" and "softmax"/"logistic".
inline LinkSpec link_by_name(const std::string& name, bool half_lipschitz = false) {
  if (name == "identity" || name == "linear") return identity_link();
  if (name == "softmax" || name == "logistic") return softmax_link_spec(half_lipschitz);
  throw InvalidArgument("unknown link '" + name + "' (expected identity|linear|softmax|logistic)");
}

/// Features X (n x d, dense or sparse) with targets Y (n x k). A non-owning view.
template <class XMatrix>
struct LabeledBatch {
  const XMatrix& x;
  const Matrix& y;

  LabeledBatch(const XMatrix& features, const Matrix& targets) : x(features), y(targets) {
    detail::require(x.rows() == y.rows(), "LabeledBatch: X has " + std::to_string(x.rows()) +
                                              " rows but Y has " + std::to_string(y.rows()));
    detail::require(x.rows() >= 1, "LabeledBatch: no examples");
  }

  Index rows() const { return x.rows(); }
  Index dim() const { return x.cols(); }
  Index classes() const { return y.cols(); }
};

/// Throws unless every row of Y is nonnegative and sums to one within tol.
inline void require_simplex_rows(const Matrix& y, double tol = 1e-12) {
  for (Index i = 0; i < y.rows(); ++i) {
    if (y.row(i).minCoeff() < -tol || std::abs(y.row(i).sum() - 1.0) > tol) {
      throw InvalidArgument("label row " + std::to_string(i) + " is not on the probability simplex");
    }
  }
}

/// Scores U = X W^T (n x k).
template <class XMatrix>
Matrix scores(const Matrix& w, const XMatrix& x) {
  detail::require(w.cols() == x.cols(), "scores: W has " + std::to_string(w.cols()) +
                                            " columns but X has " + std::to_string(x.cols()));
  return Matrix(x * w.transpose());
}

/// Loss, residual MSE and gradient from one pass over the batch.
struct Evaluation {
  double loss = 0.0;
  double mse = 0.0;  // (1/n) sum ||g(W x_i) - y_i||^2
  Matrix gradient;   // k x d
  Matrix predictions;
};

/// Loss and residual MSE of a given n x k score matrix (no gradient).
inline Evaluation evaluate_scores(const LinkSpec& link, const Matrix& u, const Matrix& y) {
  detail::require(u.rows() == y.rows() && u.cols() == y.cols(), "evaluate_scores: shape mismatch");
  const double n = static_cast<double>(u.rows());
  Evaluation ev;
  ev.predictions = link.grad_rows(u);
  ev.loss = (link.phi_rows(u).sum() - (y.array() * u.array()).sum()) / n;
  ev.mse = (ev.predictions - y).squaredNorm() / n;
  return ev;
}

namespace detail {

template <class XMatrix>
void check_shapes(const Matrix& w, const LabeledBatch<XMatrix>& batch) {
  require(w.rows() == batch.classes(), "weight matrix has " + std::to_string(w.rows()) +
                                           " rows but labels have " + std::to_string(batch.classes()) +
                                           " classes");
  require(w.cols() == batch.dim(), "weight matrix has " + std::to_string(w.cols()) +
                                       " columns but features have " + std::to_string(batch.dim()));
}

}  // namespace detail

/// `offset`, when given, is an n x k score matrix added to X W^T (used when a
/// model is fit on top of fixed earlier predictions).
template <class XMatrix>
Evaluation evaluate(const LinkSpec& link, const Matrix& w, const LabeledBatch<XMatrix>& batch,
                    bool with_gradient = true, const Matrix* offset = nullptr) {
  detail::check_shapes(w, batch);
  const double n = static_cast<double>(batch.rows());
  Matrix u = scores(w, batch.x);
  if (offset != nullptr) {
    detail::require(offset->rows() == u.rows() && offset->cols() == u.cols(), "evaluate: offset shape mismatch");
    u += *offset;
  }
  Evaluation ev = evaluate_scores(link, u, batch.y);
  if (with_gradient) ev.gradient = Matrix((ev.predictions - batch.y).transpose() * batch.x) / n;
  return ev;
}

/// Sample calibrated loss (1/n) sum [Phi(W x_i) - y_i^T W x_i].
template <class XMatrix>
double loss(const LinkSpec& link, const Matrix& w, const LabeledBatch<XMatrix>& batch) {
  return evaluate(link, w, batch, false).loss;
}

/// (1/n) sum (g(W x_i) - y_i) x_i^T, shape k x d.
template <class XMatrix>
Matrix loss_gradient(const LinkSpec& link, const Matrix& w, const LabeledBatch<XMatrix>& batch) {
  return evaluate(link, w, batch, true).gradient;
}

/// Row-wise argmax; ties resolve to the lowest class index.
inline std::vector<Index> argmax_rows(const Matrix& m) {
  std::vector<Index> out(static_cast<std::size_t>(m.rows()), 0);
  for (Index i = 0; i < m.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < m.cols(); ++j) {
      if (m(i, j) > m(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace glmfit
