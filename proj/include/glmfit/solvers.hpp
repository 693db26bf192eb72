#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "glmfit/features.hpp"
#include "glmfit/glm.hpp"
#include "glmfit/linalg.hpp"
#include "glmfit/simplex.hpp"

namespace glmfit {

struct TraceRecord {
  Index t = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();  // NaN where no loss is defined
  double mse = 0.0;
  double seconds = 0.0;
};

struct TrainTrace {
  std::string algorithm;
  std::vector<TraceRecord> records;
  double initial_weight_norm = 0.0;  // ||W_0||_F, checked by the rate monitors
  double ridge_used = 0.0;
  bool ridge_substituted = false;
  bool stopped_early = false;
  std::string stop_reason;

  std::vector<double> losses() const {
    std::vector<double> out;
    for (const auto& r : records) out.push_back(r.loss);
    return out;
  }
  std::vector<double> mses() const {
    std::vector<double> out;
    for (const auto& r : records) out.push_back(r.mse);
    return out;
  }
};

/// A fitted k x d weight matrix and the link its scores pass through.
struct WeightMatrix {
  Matrix w;
  LinkSpec link;
  std::string feature_meta;
};

struct IterativeOptions {
  Index iters = 100;
  double ridge = 0.0;
  RidgeFallback fallback = RidgeFallback::kNone;
  /// Stop when the loss drops by less than early_stop_tol over early_stop_window iterations.
  bool early_stop = false;
  double early_stop_tol = 1e-12;
  Index early_stop_window = 10;
  unsigned threads = 1;
};

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline bool should_stop_early(const IterativeOptions& o, const TrainTrace& trace) {
  if (!o.early_stop) return false;
  const auto n = static_cast<Index>(trace.records.size());
  if (n <= o.early_stop_window) return false;
  const double before = trace.records[static_cast<std::size_t>(n - 1 - o.early_stop_window)].loss;
  const double now = trace.records.back().loss;
  return before - now < o.early_stop_tol;
}

template <class XMatrix>
SpdFactor factor_moment(const XMatrix& x, double ridge, RidgeFallback fallback, unsigned threads,
                        const std::string& context) {
  SecondMoment s = accumulate_second_moment(x, threads);
  s.ridge = ridge;
  try {
    return SpdFactor(s, fallback);
  } catch (const NumericalError& e) {
    throw NumericalError(context + ": " + e.what());
  }
}

/// Preconditioned iterations W <- W - (1/L) [(S + ridge I)^{-1} grad^T]^T against
/// a fixed factor. `offset` adds constant scores (stagewise logistic).
template <class XMatrix>
Matrix preconditioned_iterations(const LabeledBatch<XMatrix>& batch, const LinkSpec& link,
                                 const SpdFactor& factor, Matrix w, const IterativeOptions& opts,
                                 TrainTrace& trace, const Matrix* offset = nullptr) {
  Stopwatch clock;
  Evaluation ev = evaluate(link, w, batch, true, offset);
  trace.records.push_back({0, ev.loss, ev.mse, clock.seconds()});
  for (Index t = 1; t <= opts.iters; ++t) {
    w -= factor.solve(ev.gradient.transpose()).transpose() / link.lipschitz;
    ev = evaluate(link, w, batch, true, offset);
    trace.records.push_back({t, ev.loss, ev.mse, clock.seconds()});
    if (should_stop_early(opts, trace)) {
      trace.stopped_early = true;
      trace.stop_reason = "loss decrease below tolerance over window";
      break;
    }
  }
  return w;
}

}  // namespace detail

struct GlsResult {
  WeightMatrix model;
  TrainTrace trace;
};

/// Generalized least squares: preconditioned gradient descent whose fixed
/// preconditioner is the empirical second moment, factored once.
///
/// W_{t+1}^T = W_t^T - (1/L) (Sigma + ridge I)^{-1} (1/n) sum (g(W_t x_i) - y_i) x_i^T.
/// The trace records the loss at W_0 and after every update. An empty `w0`
/// means start from zero.
template <class XMatrix>
GlsResult generalized_least_squares(const LabeledBatch<XMatrix>& batch, const LinkSpec& link,
                                    const IterativeOptions& opts, Matrix w0 = Matrix()) {
  detail::require(opts.iters >= 1, "generalized_least_squares: iters must be >= 1");
  if (w0.size() == 0) w0 = Matrix::Zero(batch.classes(), batch.dim());
  const SpdFactor factor =
      detail::factor_moment(batch.x, opts.ridge, opts.fallback, opts.threads, "generalized_least_squares");
  GlsResult out;
  out.trace.algorithm = "gls";
  out.trace.initial_weight_norm = w0.norm();
  out.trace.ridge_used = factor.ridge();
  out.trace.ridge_substituted = factor.ridge_substituted();
  out.model.link = link;
  out.model.w = detail::preconditioned_iterations(batch, link, factor, std::move(w0), opts, out.trace);
  return out;
}

/// Plain gradient descent with the theory step 1 / (L sigma_max(Sigma)).
template <class XMatrix>
GlsResult gradient_descent(const LabeledBatch<XMatrix>& batch, const LinkSpec& link,
                           const IterativeOptions& opts, Matrix w0 = Matrix()) {
  detail::require(opts.iters >= 1, "gradient_descent: iters must be >= 1");
  if (w0.size() == 0) w0 = Matrix::Zero(batch.classes(), batch.dim());
  const SecondMoment s = accumulate_second_moment(batch.x, opts.threads);
  const double sigma_max = max_eigenvalue(s.matrix);
  if (!(sigma_max > 0.0)) throw NumericalError("gradient_descent: second moment is zero");
  const double step = 1.0 / (link.lipschitz * sigma_max);

  GlsResult out;
  out.trace.algorithm = "gd";
  out.trace.initial_weight_norm = w0.norm();
  out.model.link = link;
  detail::Stopwatch clock;
  Matrix w = std::move(w0);
  Evaluation ev = evaluate(link, w, batch);
  out.trace.records.push_back({0, ev.loss, ev.mse, clock.seconds()});
  for (Index t = 1; t <= opts.iters; ++t) {
    w -= step * ev.gradient;
    ev = evaluate(link, w, batch);
    out.trace.records.push_back({t, ev.loss, ev.mse, clock.seconds()});
    if (detail::should_stop_early(opts, out.trace)) {
      out.trace.stopped_early = true;
      out.trace.stop_reason = "loss decrease below tolerance over window";
      break;
    }
  }
  out.model.w = std::move(w);
  return out;
}

// ---------------------------------------------------------------------------
// Calibrated least squares.

/// Per-iteration state of the calibrated solver: yhat (n x k, simplex rows),
/// z (pre-calibration predictions) and the stage weights.
struct PredictionState {
  Matrix yhat;
  Matrix z;
  std::vector<Matrix> xweights;    // k x d per iteration
  std::vector<Matrix> calweights;  // k x (k |G|) per iteration
};

/// Replays the calibrated iterations on new features. The model is not proper:
/// prediction t depends on prediction t-1, so every stage is kept.
struct CalibratedModel {
  CalibrationBasis basis;
  std::vector<Matrix> xweights;
  std::vector<Matrix> calweights;
  Index classes = 0;
  Index input_dim = 0;

  template <class XMatrix>
  Matrix predict(const XMatrix& x) const {
    if (x.cols() != input_dim) {
      throw InvalidArgument("calibrated model expects d = " + std::to_string(input_dim) + " features, got " +
                            std::to_string(x.cols()));
    }
    Matrix yhat = Matrix::Zero(x.rows(), classes);
    for (std::size_t t = 0; t < xweights.size(); ++t) {
      const Matrix z = yhat + x * xweights[t].transpose();
      yhat = apply_basis(basis, z) * calweights[t].transpose();
      project_rows_onto_simplex(yhat);
    }
    return yhat;
  }
};

/// Snapshot handed to the optional observer after each calibrated iteration.
struct CalibrationStep {
  Index t;
  const Matrix& z;
  const Matrix& basis_features;  // G(z)
  const Matrix& yhat_preclip;
  const Matrix& yhat;
};

struct CalibratedOptions {
  Index iters = 10;
  double ridge = 0.0;
  RidgeFallback fallback = RidgeFallback::kNone;
  unsigned threads = 1;
  std::function<void(const CalibrationStep&)> observer;
};

struct CalibratedResult {
  PredictionState state;
  CalibratedModel model;
  TrainTrace trace;
};

/// Calibrated least squares. Each iteration
///   (i)  fits the residual y - yhat against x:   z = yhat + W_t x,
///   (ii) refits y against G(z) from scratch:     yhat_pre = Wcal_t G(z),
///   (iii) projects each row of yhat_pre onto the simplex.
/// The trace records (1/n) sum ||yhat_i - y_i||^2, starting from yhat_0 = 0.
template <class XMatrix>
CalibratedResult calibrated_least_squares(const LabeledBatch<XMatrix>& batch, const CalibrationBasis& basis,
                                          const CalibratedOptions& opts) {
  detail::require(opts.iters >= 1, "calibrated_least_squares: iters must be >= 1");
  if (!basis.contains_identity()) {
    throw InvalidArgument("calibrated_least_squares: calibration basis must contain the identity function");
  }
  require_simplex_rows(batch.y, 1e-9);

  const double n = static_cast<double>(batch.rows());
  const SpdFactor x_factor =
      detail::factor_moment(batch.x, opts.ridge, opts.fallback, opts.threads, "calibrated_least_squares");

  CalibratedResult out;
  out.trace.algorithm = "calibrated";
  out.trace.ridge_used = x_factor.ridge();
  out.trace.ridge_substituted = x_factor.ridge_substituted();
  out.model.basis = basis;
  out.model.classes = batch.classes();
  out.model.input_dim = batch.dim();

  detail::Stopwatch clock;
  PredictionState& st = out.state;
  st.yhat = Matrix::Zero(batch.rows(), batch.classes());
  out.trace.records.push_back({0, std::numeric_limits<double>::quiet_NaN(), (st.yhat - batch.y).squaredNorm() / n,
                               clock.seconds()});

  for (Index t = 1; t <= opts.iters; ++t) {
    const Matrix residual = batch.y - st.yhat;
    const Matrix w_x = x_factor.solve(Matrix(batch.x.transpose() * residual) / n).transpose();
    st.z = st.yhat + batch.x * w_x.transpose();

    const Matrix g = apply_basis(basis, st.z);
    const SpdFactor g_factor = detail::factor_moment(g, opts.ridge, opts.fallback, 1,
                                                     "calibrated_least_squares (calibration step)");
    const Matrix w_cal = g_factor.solve(Matrix(g.transpose() * batch.y) / n).transpose();
    const Matrix preclip = g * w_cal.transpose();
    st.yhat = preclip;
    project_rows_onto_simplex(st.yhat);

    st.xweights.push_back(w_x);
    st.calweights.push_back(w_cal);
    out.trace.records.push_back({t, std::numeric_limits<double>::quiet_NaN(), (st.yhat - batch.y).squaredNorm() / n,
                                 clock.seconds()});
    if (opts.observer) opts.observer(CalibrationStep{t, st.z, g, preclip, st.yhat});
  }
  out.model.xweights = st.xweights;
  out.model.calweights = st.calweights;
  return out;
}

// ---------------------------------------------------------------------------
// Stagewise regression.

enum class InnerSolver { kLinear, kLogistic, kCalibratedLinear };

inline std::string to_string(InnerSolver s) {
  switch (s) {
    case InnerSolver::kLinear: return "linear";
    case InnerSolver::kLogistic: return "logistic";
    case InnerSolver::kCalibratedLinear: return "calibrated-linear";
  }
  return "?";
}

inline InnerSolver inner_solver_from_string(const std::string& s) {
  if (s == "linear") return InnerSolver::kLinear;
  if (s == "logistic") return InnerSolver::kLogistic;
  if (s == "calibrated-linear" || s == "calibrated") return InnerSolver::kCalibratedLinear;
  throw InvalidArgument("unknown inner solver '" + s + "' (expected linear|logistic|calibrated-linear)");
}

struct StagewiseOptions {
  Index stages = 10;
  InnerSolver inner = InnerSolver::kLinear;
  Index inner_iters = 50;  // logistic inner loops
  double ridge = 0.0;
  RidgeFallback fallback = RidgeFallback::kNone;
  bool half_lipschitz = false;
  unsigned threads = 1;
};

struct StagewiseStage {
  BlockRecord block;
  Matrix w;  // k x p, or k x (p + k) for calibrated-linear stages after the first
};

/// Generator seed plus per-stage weights; enough to replay predictions.
struct StagewiseModel {
  GeneratorSpec generator;
  InnerSolver inner = InnerSolver::kLinear;
  Index classes = 0;
  Index input_dim = 0;
  std::vector<StagewiseStage> stages;

  /// Additive scores after all stages (softmax applied for the logistic inner fit).
  template <class XMatrix>
  Matrix predict(const XMatrix& x) const {
    if (x.cols() != input_dim) {
      throw InvalidArgument("stagewise model expects d = " + std::to_string(input_dim) + " features, got " +
                            std::to_string(x.cols()));
    }
    Matrix s = Matrix::Zero(x.rows(), classes);
    for (const auto& stage : stages) {
      Matrix f = materialize_block(generator, stage.block, x);
      if (inner == InnerSolver::kCalibratedLinear && stage.w.cols() > f.cols()) {
        Matrix joined(f.rows(), f.cols() + s.cols());
        joined << f, s;
        f = std::move(joined);
      }
      s += f * stage.w.transpose();
    }
    if (inner == InnerSolver::kLogistic) return detail::softmax_rows(s);
    return s;
  }
};

struct StagewiseResult {
  StagewiseModel model;
  TrainTrace trace;
  Matrix predictions;  // final training predictions
};

/// Stagewise regression: every stage draws a block of features from `gen`, fits
/// the current residual on it with the inner solver, and adds the block's
/// predictions. The logistic inner fit runs preconditioned softmax iterations
/// with the accumulated scores as a fixed offset.
template <class XMatrix>
StagewiseResult stagewise(const LabeledBatch<XMatrix>& batch, FeatureGenerator gen, const StagewiseOptions& opts) {
  detail::require(opts.stages >= 1, "stagewise: stages must be >= 1");
  const double n = static_cast<double>(batch.rows());
  const Index k = batch.classes();
  const bool logistic = opts.inner == InnerSolver::kLogistic;
  const LinkSpec link = logistic ? softmax_link_spec(opts.half_lipschitz) : identity_link();

  StagewiseResult out;
  out.trace.algorithm = "stagewise/" + to_string(opts.inner);
  out.trace.ridge_used = opts.ridge;
  out.model.generator = gen.spec();
  out.model.inner = opts.inner;
  out.model.classes = k;
  out.model.input_dim = batch.dim();

  detail::Stopwatch clock;
  Matrix scores_acc = Matrix::Zero(batch.rows(), k);
  auto outputs = [&]() { return logistic ? detail::softmax_rows(scores_acc) : scores_acc; };
  auto record = [&](Index t) {
    const Evaluation ev = evaluate_scores(link, scores_acc, batch.y);
    out.trace.records.push_back({t, ev.loss, ev.mse, clock.seconds()});
  };
  record(0);

  for (Index t = 1; t <= opts.stages; ++t) {
    const Matrix residual = batch.y - outputs();
    auto block = gen.next(batch.x, residual);
    if (!block) {
      out.trace.stopped_early = true;
      out.trace.stop_reason = "feature generator exhausted after " + std::to_string(t - 1) + " stages";
      break;
    }
    Matrix f = std::move(block->features);
    // The first stage has no predictions yet; joining zero columns would make
    // the moment singular, so it fits the block alone.
    if (opts.inner == InnerSolver::kCalibratedLinear && t > 1) {
      Matrix joined(f.rows(), f.cols() + k);
      joined << f, scores_acc;
      f = std::move(joined);
    }
    const std::string context = "stagewise stage " + std::to_string(t);
    const SpdFactor factor = detail::factor_moment(f, opts.ridge, opts.fallback, opts.threads, context);
    if (factor.ridge_substituted()) out.trace.ridge_substituted = true;

    Matrix w;
    if (logistic) {
      IterativeOptions inner_opts;
      inner_opts.iters = opts.inner_iters;
      TrainTrace inner_trace;
      w = detail::preconditioned_iterations(LabeledBatch<Matrix>(f, batch.y), link, factor,
                                            Matrix::Zero(k, f.cols()), inner_opts, inner_trace, &scores_acc);
    } else {
      w = factor.solve(Matrix(f.transpose() * residual) / n).transpose();
    }
    scores_acc += f * w.transpose();
    out.model.stages.push_back({std::move(block->record), std::move(w)});
    record(t);
  }
  out.predictions = outputs();
  return out;
}

// ---------------------------------------------------------------------------
// Prediction.

struct Prediction {
  Matrix scores;
  std::vector<Index> labels;  // argmax, ties to the lowest class index
};

template <class XMatrix>
Prediction predict(const WeightMatrix& model, const XMatrix& x) {
  if (x.cols() != model.w.cols()) {
    throw InvalidArgument("model expects d = " + std::to_string(model.w.cols()) + " features, got " +
                          std::to_string(x.cols()));
  }
  Prediction p;
  p.scores = model.link.grad_rows(scores(model.w, x));
  p.labels = argmax_rows(p.scores);
  return p;
}

template <class XMatrix>
Prediction predict(const CalibratedModel& model, const XMatrix& x) {
  Prediction p;
  p.scores = model.predict(x);
  p.labels = argmax_rows(p.scores);
  return p;
}

template <class XMatrix>
Prediction predict(const StagewiseModel& model, const XMatrix& x) {
  Prediction p;
  p.scores = model.predict(x);
  p.labels = argmax_rows(p.scores);
  return p;
}

}  // namespace glmfit
