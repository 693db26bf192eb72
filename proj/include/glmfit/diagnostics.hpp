#pragma once

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "glmfit/glm.hpp"
#include "glmfit/linalg.hpp"
#include "glmfit/random.hpp"
#include "glmfit/solvers.hpp"

namespace glmfit {

// ---------------------------------------------------------------------------
// Metrics.

/// Fraction of rows whose argmax (ties to the lowest index) differs from the label.
inline double classification_error(const Matrix& scores, const std::vector<Index>& labels) {
  detail::require(static_cast<Index>(labels.size()) == scores.rows(), "classification_error: " +
                                                                          std::to_string(scores.rows()) + " score rows but " +
                                                                          std::to_string(labels.size()) + " labels");
  if (labels.empty()) return 0.0;
  const auto pred = argmax_rows(scores);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += pred[i] != labels[i] ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

/// counts[true][predicted].
inline std::vector<std::vector<long long>> confusion_counts(const Matrix& scores, const std::vector<Index>& labels) {
  detail::require(static_cast<Index>(labels.size()) == scores.rows(), "confusion_counts: shape mismatch");
  const auto k = static_cast<std::size_t>(scores.cols());
  std::vector<std::vector<long long>> counts(k, std::vector<long long>(k, 0));
  const auto pred = argmax_rows(scores);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    detail::require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < k, "confusion_counts: label out of range");
    ++counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(pred[i])];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Mahalanobis norm and the majorization inequality.

/// sum_i w_i^T M w_i over the rows w_i of W (a squared norm, as the proofs use it).
inline double mahalanobis_norm(const Matrix& w, const Matrix& m) {
  detail::require(m.rows() == m.cols() && m.rows() == w.cols(), "mahalanobis_norm: M must be d x d with d = cols(W)");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw InvalidArgument("mahalanobis_norm: M is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10 * scale) {
    throw InvalidArgument("mahalanobis_norm: M is not positive semidefinite (min eigenvalue " +
                          std::to_string(eig.eigenvalues().minCoeff()) + ")");
  }
  return (w * m).cwiseProduct(w).sum();
}

struct MajorizationCheck {
  bool pass = false;
  double lhs = 0.0;    // loss(W1)
  double rhs = 0.0;    // loss(W2) + <grad(W2), W1 - W2> + (L/2) ||W1 - W2||_Sigma
  double slack = 0.0;  // rhs - lhs
};

/// Checks the quadratic upper bound of the loss in the metric of `sigma`
/// (normally the second moment (1/n) X^T X) with L = link.lipschitz.
template <class XMatrix>
MajorizationCheck check_majorization(const LinkSpec& link, const LabeledBatch<XMatrix>& batch, const Matrix& w1,
                                     const Matrix& w2, const Matrix& sigma) {
  detail::require(w1.rows() == w2.rows() && w1.cols() == w2.cols(), "check_majorization: W1 and W2 differ in shape");
  const Evaluation e1 = evaluate(link, w1, batch, false);
  const Evaluation e2 = evaluate(link, w2, batch, true);
  const Matrix diff = w1 - w2;
  MajorizationCheck out;
  out.lhs = e1.loss;
  out.rhs = e2.loss + e2.gradient.cwiseProduct(diff).sum() + 0.5 * link.lipschitz * mahalanobis_norm(diff, sigma);
  out.slack = out.rhs - out.lhs;
  out.pass = out.lhs <= out.rhs + 1e-10;
  return out;
}

template <class XMatrix>
MajorizationCheck check_majorization(const LinkSpec& link, const LabeledBatch<XMatrix>& batch, const Matrix& w1,
                                     const Matrix& w2) {
  return check_majorization(link, batch, w1, w2, accumulate_second_moment(batch.x).matrix);
}

// ---------------------------------------------------------------------------
// Dual (conjugate) inequalities.

struct LinkInverse {
  bool converged = false;
  Vector z;
  Index iterations = 0;
  double residual = 0.0;
};

/// Solves softmax(z) = u for mean-zero z by damped Newton. Requires u on the
/// simplex with every entry >= min_entry.
inline LinkInverse invert_softmax(const Vector& u, double tol = 1e-10, Index max_iter = 200, double min_entry = 1e-3) {
  const Index k = u.size();
  detail::require(k >= 2, "invert_softmax: need k >= 2");
  if (u.minCoeff() < min_entry || std::abs(u.sum() - 1.0) > 1e-12) {
    throw InvalidArgument("invert_softmax: point is not in the simplex interior (min entry " +
                          std::to_string(min_entry) + ")");
  }
  LinkInverse out;
  // log u - mean(log u) is the exact inverse; starting from zero exercises the solver.
  Vector z = Vector::Zero(k);
  const Matrix ones = Matrix::Constant(k, k, 1.0 / static_cast<double>(k));
  auto residual_of = [&](const Vector& zz) { return Vector(softmax_link(zz) - u); };
  Vector r = residual_of(z);
  for (Index it = 0; it < max_iter; ++it) {
    out.residual = r.lpNorm<Eigen::Infinity>();
    if (out.residual <= tol) {
      out.converged = true;
      out.iterations = it;
      break;
    }
    const Vector p = softmax_link(z);
    // The Jacobian diag(p) - p p^T is singular along 1; adding 11^T/k fixes
    // the mean-zero gauge without changing the step inside that subspace.
    const Matrix jac = Matrix(p.asDiagonal()) - p * p.transpose() + ones;
    Vector step = jac.ldlt().solve(r);
    step.array() -= step.mean();
    double alpha = 1.0;
    Vector cand = z - step;
    Vector rc = residual_of(cand);
    while (rc.norm() > (1.0 - 1e-4 * alpha) * r.norm() && alpha > 1e-8) {
      alpha *= 0.5;
      cand = z - alpha * step;
      rc = residual_of(cand);
    }
    z = cand;
    r = rc;
    out.iterations = it + 1;
  }
  if (!out.converged) {
    out.residual = r.lpNorm<Eigen::Infinity>();
    out.converged = out.residual <= tol;
  }
  z.array() -= z.mean();
  out.z = z;
  return out;
}

/// g^{-1}(u) = grad Phi*(u) for the built-in links.
inline LinkInverse invert_link(const LinkSpec& link, const Vector& u) {
  if (link.name == "identity") return LinkInverse{true, u, 0, 0.0};
  if (link.name == "softmax") return invert_softmax(u);
  throw InvalidArgument("invert_link: no inverse available for link '" + link.name + "'");
}

struct DualViolation {
  std::size_t pair = 0;
  std::string which;  // "lower" or "upper"
  double inner = 0.0;
  double bound = 0.0;
};

struct DualReport {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // inversion did not converge
  bool upper_applicable = false;  // needs mu > 0
  double min_lower_slack = std::numeric_limits<double>::infinity();
  double min_upper_slack = std::numeric_limits<double>::infinity();
  std::vector<DualViolation> violations;

  bool pass() const { return violations.empty(); }
};

/// For pairs (u, v) in the range of g evaluates
///   <g^{-1}(u) - g^{-1}(v), u - v> >= (1/L) ||u - v||^2
/// and, when mu > 0, the matching upper bound with 1/mu.
inline DualReport check_dual_inequalities(const LinkSpec& link, const std::vector<std::pair<Vector, Vector>>& pairs,
                                          double tol = 1e-10) {
  DualReport rep;
  rep.upper_applicable = link.strong_mono > 0.0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& [u, v] = pairs[p];
    detail::require(u.size() == v.size(), "check_dual_inequalities: pair dimensions differ");
    const LinkInverse iu = invert_link(link, u);
    const LinkInverse iv = invert_link(link, v);
    if (!iu.converged || !iv.converged) {
      ++rep.skipped;
      continue;
    }
    ++rep.checked;
    const double inner = (iu.z - iv.z).dot(u - v);
    const double sq = (u - v).squaredNorm();
    const double lower = sq / link.lipschitz;
    rep.min_lower_slack = std::min(rep.min_lower_slack, inner - lower);
    if (inner < lower - tol) rep.violations.push_back({p, "lower", inner, lower});
    if (rep.upper_applicable) {
      const double upper = sq / link.strong_mono;
      rep.min_upper_slack = std::min(rep.min_upper_slack, upper - inner);
      if (inner > upper + tol) rep.violations.push_back({p, "upper", inner, upper});
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Empirical link condition number.

struct ConditionEstimate {
  double lipschitz = 0.0;
  double strong_mono = 0.0;
  double kappa = std::numeric_limits<double>::infinity();
  std::size_t pairs = 0;
};

/// Estimates L and mu of the link over the realized scores (rows of U) from
/// sampled pairs: the largest and smallest <g(u)-g(v), u-v> / ||u-v||^2.
/// For softmax, differences are taken in the mean-zero subspace, since g is
/// invariant to adding a constant to every score.
inline ConditionEstimate estimate_link_condition(const LinkSpec& link, const Matrix& u, std::size_t n_pairs = 2000,
                                                 std::uint64_t seed = 0) {
  detail::require(u.rows() >= 2, "estimate_link_condition: need at least two score rows");
  Rng rng(seed);
  ConditionEstimate est;
  est.lipschitz = 0.0;
  est.strong_mono = std::numeric_limits<double>::infinity();
  const bool shift_invariant = link.name == "softmax";
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const auto i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(u.rows())));
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(u.rows())));
    if (i == j) continue;
    Vector a = u.row(i).transpose();
    Vector b = u.row(j).transpose();
    Vector diff = a - b;
    if (shift_invariant) {
      diff.array() -= diff.mean();
      b = a - diff;
    }
    const double sq = diff.squaredNorm();
    if (sq <= 1e-24) continue;
    const double ratio = (link.grad(a) - link.grad(b)).dot(diff) / sq;
    est.lipschitz = std::max(est.lipschitz, ratio);
    est.strong_mono = std::min(est.strong_mono, ratio);
    ++est.pairs;
  }
  detail::require(est.pairs > 0, "estimate_link_condition: all sampled pairs were degenerate");
  est.kappa = est.strong_mono > 0.0 ? est.lipschitz / est.strong_mono : std::numeric_limits<double>::infinity();
  return est;
}

// ---------------------------------------------------------------------------
// Rate monitors.

struct BoundRow {
  Index t = 0;
  double value = 0.0;  // observed gap or MSE
  double bound = 0.0;
  bool pass = true;
};

struct BoundReport {
  std::string name;
  std::map<std::string, double> constants;
  std::vector<BoundRow> rows;
  std::vector<BoundRow> linear_rows;  // linear-rate form, only when mu > 0
  std::vector<Index> monotone_violations;

  std::vector<Index> violations() const {
    std::vector<Index> out;
    for (const auto& r : rows) {
      if (!r.pass) out.push_back(r.t);
    }
    return out;
  }
  bool pass() const {
    for (const auto& r : rows) {
      if (!r.pass) return false;
    }
    for (const auto& r : linear_rows) {
      if (!r.pass) return false;
    }
    return monotone_violations.empty();
  }
};

/// Sublinear bound 2 L ||W*||_F^2 / (t + 4) on loss(W_t) - loss(W*) for a
/// trace started at W_0 = 0, plus (L/2) ((kappa-1)/(kappa+1))^t ||W*||_F^2
/// when the link is strongly monotone.
inline BoundReport theorem1_monitor(const TrainTrace& trace, double w_star_fro, double loss_star,
                                    const LinkSpec& link) {
  if (trace.initial_weight_norm != 0.0) {
    throw InvalidArgument("theorem1_monitor: the bound assumes W_0 = 0 but the trace started at ||W_0||_F = " +
                          std::to_string(trace.initial_weight_norm));
  }
  const double L = link.lipschitz;
  const double w2 = w_star_fro * w_star_fro;
  const double tol = 1e-12 * std::max(1.0, std::abs(loss_star));
  BoundReport rep;
  rep.name = "sublinear";
  rep.constants = {{"L", L}, {"mu", link.strong_mono}, {"kappa", link.condition()}, {"w_star_fro", w_star_fro},
                   {"loss_star", loss_star}};
  for (const auto& r : trace.records) {
    if (std::isnan(r.loss)) continue;
    const double gap = r.loss - loss_star;
    const double bound = 2.0 * L * w2 / (static_cast<double>(r.t) + 4.0);
    rep.rows.push_back({r.t, gap, bound, gap <= bound + tol});
    if (link.strong_mono > 0.0) {
      const double kappa = link.condition();
      const double lin = 0.5 * L * std::pow((kappa - 1.0) / (kappa + 1.0), static_cast<double>(r.t)) * w2;
      rep.linear_rows.push_back({r.t, gap, lin, gap <= lin + tol});
    }
  }
  return rep;
}

/// Envelope 22 kappa^2 / t on the mean squared residual of the calibrated
/// solver (t >= 1), plus the hard check that the residual never increases.
inline BoundReport theorem2_monitor(const TrainTrace& trace, double kappa) {
  detail::require(kappa >= 1.0, "theorem2_monitor: kappa must be >= 1");
  BoundReport rep;
  rep.name = "calibrated";
  rep.constants = {{"kappa", kappa}};
  const TraceRecord* prev = nullptr;
  for (const auto& r : trace.records) {
    if (prev != nullptr && r.mse > prev->mse + 1e-12 * std::max(1.0, prev->mse)) rep.monotone_violations.push_back(r.t);
    prev = &r;
    if (r.t < 1) continue;
    const double bound = 22.0 * kappa * kappa / static_cast<double>(r.t);
    rep.rows.push_back({r.t, r.mse, bound, r.mse <= bound});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization.

inline nlohmann::json to_json(const BoundRow& r) {
  return {{"t", r.t}, {"value", r.value}, {"bound", r.bound}, {"pass", r.pass}};
}

inline nlohmann::json to_json(const BoundReport& rep) {
  nlohmann::json j;
  j["name"] = rep.name;
  j["constants"] = nlohmann::json::object();
  for (const auto& [k, v] : rep.constants) {
    if (std::isfinite(v)) {
      j["constants"][k] = v;
    } else {
      j["constants"][k] = nullptr;
    }
  }
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rep.rows) j["rows"].push_back(to_json(r));
  if (!rep.linear_rows.empty()) {
    j["linear_rows"] = nlohmann::json::array();
    for (const auto& r : rep.linear_rows) j["linear_rows"].push_back(to_json(r));
  }
  j["monotone_violations"] = rep.monotone_violations;
  j["violations"] = rep.violations();
  j["pass"] = rep.pass();
  return j;
}

/// t,loss,mse,seconds with 17 significant digits; NaN losses are left empty.
inline void write_trace_csv(std::ostream& out, const TrainTrace& trace) {
  out << "t,loss,mse,seconds\n";
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(17);
  for (const auto& r : trace.records) {
    out << r.t << ',';
    if (!std::isnan(r.loss)) out << r.loss;
    out << ',' << r.mse << ',' << r.seconds << '\n';
  }
  out.flags(flags);
  out.precision(prec);
}

}  // namespace glmfit
