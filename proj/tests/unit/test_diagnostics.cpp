#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "../oracles.hpp"
#include "glmfit/data.hpp"
#include "glmfit/diagnostics.hpp"
#include "glmfit/solvers.hpp"

using namespace glmfit;

namespace {

Matrix gaussian(Index r, Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
  return m;
}

Vector random_simplex_point(Index k, Rng& rng, double floor) {
  Vector u(k);
  for (Index i = 0; i < k; ++i) u(i) = -std::log(1.0 - rng.uniform()) + floor;
  return u / u.sum();
}

}  // namespace

// ---------------------------------------------------------------- metrics

TEST(ClassificationError, PerfectTiesAndFixture) {
  Matrix s(3, 3);
  s << 3, 1, 0, 0, 2, 1, 0, 0, 5;
  EXPECT_EQ(classification_error(s, {0, 1, 2}), 0.0);
  // uniform scores predict class 0 everywhere
  EXPECT_EQ(classification_error(Matrix::Constant(4, 3, 0.25), {1, 2, 1, 2}), 1.0);
  Matrix f(10, 2);
  for (Index i = 0; i < 10; ++i) f.row(i) << (i < 6 ? 1.0 : 0.0), (i < 6 ? 0.0 : 1.0);
  // predictions: 0 x6, 1 x4; labels disagree on rows 4, 5 and 9
  EXPECT_DOUBLE_EQ(classification_error(f, {0, 0, 0, 0, 1, 1, 1, 1, 1, 0}), 0.3);
  EXPECT_THROW(classification_error(f, {0, 1}), InvalidArgument);
  EXPECT_EQ(classification_error(Matrix(0, 2), {}), 0.0);
}

TEST(ClassificationError, ConfusionCounts) {
  Matrix s(4, 2);
  s << 1, 0, 0, 1, 1, 0, 1, 0;
  const auto c = confusion_counts(s, {0, 1, 1, 0});
  EXPECT_EQ(c[0][0], 2);
  EXPECT_EQ(c[1][0], 1);
  EXPECT_EQ(c[1][1], 1);
  EXPECT_EQ(c[0][1], 0);
  EXPECT_THROW(confusion_counts(s, {0, 1, 2, 0}), InvalidArgument);
}

// ---------------------------------------------------------------- mahalanobis

TEST(Mahalanobis, ExamplesOracleAndErrors) {
  Matrix w(1, 2);
  w << 1, 2;
  EXPECT_DOUBLE_EQ(mahalanobis_norm(w, Matrix::Identity(2, 2)), 5.0);
  Matrix m(2, 2);
  m << 2, 1, 1, 2;
  EXPECT_DOUBLE_EQ(mahalanobis_norm(w, m), 2 + 4 + 8);
  Rng rng(1);
  const Matrix a = gaussian(6, 6, rng);
  const Matrix psd = a * a.transpose();
  const Matrix ww = gaussian(3, 6, rng);
  EXPECT_NEAR(mahalanobis_norm(ww, psd), oracle::mahalanobis(ww, psd), 1e-10 * oracle::mahalanobis(ww, psd));
  Matrix indef(2, 2);
  indef << 1, 0, 0, -1;
  EXPECT_THROW(mahalanobis_norm(w, indef), InvalidArgument);
  Matrix asym(2, 2);
  asym << 1, 1, 0, 1;
  EXPECT_THROW(mahalanobis_norm(w, asym), InvalidArgument);
  EXPECT_THROW(mahalanobis_norm(w, Matrix::Identity(3, 3)), InvalidArgument);
}

// ---------------------------------------------------------------- majorization

TEST(Majorization, EqualityAtSamePointAndExactForIdentity) {
  Rng rng(2);
  const Matrix x = gaussian(80, 5, rng);
  const Matrix y = gaussian(80, 3, rng);
  LabeledBatch<Matrix> b(x, y);
  const Matrix w1 = gaussian(3, 5, rng), w2 = gaussian(3, 5, rng);
  const auto same = check_majorization(identity_link(), b, w1, w1);
  EXPECT_NEAR(same.slack, 0.0, 1e-14);
  // the quadratic bound is the identity-link loss itself
  const auto exact = check_majorization(identity_link(), b, w1, w2);
  EXPECT_TRUE(exact.pass);
  EXPECT_NEAR(exact.slack, 0.0, 1e-10 * std::max(1.0, std::abs(exact.lhs)));
}

TEST(Majorization, SoftmaxRandomPairsHold) {
  Rng rng(3);
  const auto link = softmax_link_spec();
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix x = gaussian(30, 4, rng, 2.0);
    Matrix y(30, 3);
    for (Index i = 0; i < 30; ++i) y.row(i) = random_simplex_point(3, rng, 0.0).transpose();
    LabeledBatch<Matrix> b(x, y);
    const auto r = check_majorization(link, b, gaussian(3, 4, rng, 3.0), gaussian(3, 4, rng, 3.0));
    ASSERT_TRUE(r.pass) << "slack " << r.slack;
  }
}

TEST(Majorization, HalfLipschitzIsTightNearTheEdgeOfTheSimplex) {
  // Two-class scores around (t, -t) move p from (1/2, 1/2): the curvature of
  // log-sum-exp along e1 - e2 is 2 p1 p2 ~ 1/2, so L = 1/2 is nearly tight.
  Matrix x = Matrix::Ones(1, 1);
  Matrix y(1, 2);
  y << 0.5, 0.5;
  LabeledBatch<Matrix> b(x, y);
  Matrix w1(2, 1), w2 = Matrix::Zero(2, 1);
  w1 << 1e-3, -1e-3;
  const auto half = check_majorization(softmax_link_spec(true), b, w1, w2);
  EXPECT_TRUE(half.pass);
  EXPECT_LE(half.slack, 1e-9);
  const auto low_l = [&] {
    LinkSpec l = softmax_link_spec();
    l.lipschitz = 0.4;
    return check_majorization(l, b, w1, w2);
  }();
  EXPECT_FALSE(low_l.pass || low_l.slack > 0);
}

// ---------------------------------------------------------------- duality

TEST(Dual, IdentityHoldsWithEquality) {
  Rng rng(4);
  std::vector<std::pair<Vector, Vector>> pairs;
  for (int i = 0; i < 50; ++i) pairs.emplace_back(gaussian(4, 1, rng), gaussian(4, 1, rng));
  const auto rep = check_dual_inequalities(identity_link(), pairs);
  EXPECT_TRUE(rep.pass());
  EXPECT_TRUE(rep.upper_applicable);
  EXPECT_EQ(rep.checked, 50u);
  EXPECT_NEAR(rep.min_lower_slack, 0.0, 1e-12);
  EXPECT_NEAR(rep.min_upper_slack, 0.0, 1e-12);
}

TEST(Dual, SoftmaxInversionMatchesClosedForm) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector u = random_simplex_point(5, rng, 0.05);
    const auto inv = invert_softmax(u);
    ASSERT_TRUE(inv.converged);
    Vector expected = u.array().log().matrix();
    expected.array() -= expected.mean();
    EXPECT_LE((inv.z - expected).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(inv.z.sum(), 0.0, 1e-12);
  }
  Vector edge(3);
  edge << 0.9995, 0.0004, 0.0001;
  EXPECT_THROW(invert_softmax(edge), InvalidArgument);
}

TEST(Dual, SoftmaxPairsSatisfyLowerBound) {
  Rng rng(6);
  std::vector<std::pair<Vector, Vector>> pairs;
  for (int i = 0; i < 300; ++i) pairs.emplace_back(random_simplex_point(4, rng, 0.02), random_simplex_point(4, rng, 0.02));
  const Vector same = random_simplex_point(4, rng, 0.1);
  pairs.emplace_back(same, same);
  const auto rep = check_dual_inequalities(softmax_link_spec(), pairs);
  EXPECT_TRUE(rep.pass());
  EXPECT_FALSE(rep.upper_applicable);
  EXPECT_EQ(rep.checked + rep.skipped, pairs.size());
  EXPECT_GE(rep.min_lower_slack, -1e-10);
}

TEST(Condition, IdentityIsOneAndSoftmaxIsFinite) {
  Rng rng(7);
  const Matrix u = gaussian(100, 4, rng);
  const auto id = estimate_link_condition(identity_link(), u);
  EXPECT_NEAR(id.kappa, 1.0, 1e-12);
  const auto sm = estimate_link_condition(softmax_link_spec(), u);
  EXPECT_GT(sm.strong_mono, 0.0);
  EXPECT_LE(sm.lipschitz, 0.5 + 1e-12);
  EXPECT_GE(sm.kappa, 1.0);
  EXPECT_TRUE(std::isfinite(sm.kappa));
}

// ---------------------------------------------------------------- monitors

TEST(SublinearMonitor, IdentityLinkRunSatisfiesBothForms) {
  Rng rng(8);
  const Matrix x = gaussian(100, 6, rng);
  const Matrix y = gaussian(100, 2, rng);
  LabeledBatch<Matrix> b(x, y);
  IterativeOptions o;
  o.iters = 5;
  const auto res = generalized_least_squares(b, identity_link(), o);
  const Matrix ws = oracle::least_squares_weights(x, y);
  const double loss_star = evaluate(identity_link(), ws, b, false).loss;
  const auto rep = theorem1_monitor(res.trace, ws.norm(), loss_star, identity_link());
  EXPECT_TRUE(rep.pass());
  EXPECT_EQ(rep.rows.size(), 6u);
  EXPECT_EQ(rep.linear_rows.size(), 6u);
}

TEST(SublinearMonitor, SoftmaxSyntheticHoldsAndCorruptionIsFlagged) {
  SyntheticSpec spec;
  spec.n = 300;
  spec.d = 6;
  spec.k = 3;
  spec.noise = NoiseMode::kMultinomialSample;
  const auto d = synthesize(spec, 9);
  LabeledBatch<Matrix> b(d.x, d.y);
  IterativeOptions o;
  o.iters = 3000;
  const auto ref = generalized_least_squares(b, softmax_link_spec(), o);
  o.iters = 100;
  auto res = generalized_least_squares(b, softmax_link_spec(), o);
  const double loss_star = ref.trace.records.back().loss;
  const auto rep = theorem1_monitor(res.trace, ref.model.w.norm(), loss_star, softmax_link_spec());
  EXPECT_TRUE(rep.pass());
  EXPECT_TRUE(rep.linear_rows.empty());

  auto& r50 = res.trace.records[50];
  r50.loss = loss_star + 10.0 * (2.0 * ref.model.w.squaredNorm() / 54.0);
  const auto bad = theorem1_monitor(res.trace, ref.model.w.norm(), loss_star, softmax_link_spec());
  EXPECT_FALSE(bad.pass());
  EXPECT_EQ(bad.violations(), std::vector<Index>{50});

  const auto warm = generalized_least_squares(b, softmax_link_spec(), o, ref.model.w);
  EXPECT_THROW(theorem1_monitor(warm.trace, 1.0, loss_star, softmax_link_spec()), InvalidArgument);
}

TEST(CalibratedMonitor, EnvelopeAndMonotoneCheck) {
  TrainTrace t;
  for (Index i = 0; i <= 5; ++i) t.records.push_back({i, std::nan(""), 1.0 / (i + 1), 0.0});
  auto rep = theorem2_monitor(t, 1.0);
  EXPECT_TRUE(rep.pass());
  EXPECT_EQ(rep.rows.size(), 5u);
  EXPECT_DOUBLE_EQ(rep.rows[1].bound, 11.0);
  t.records[3].mse = 0.9;
  rep = theorem2_monitor(t, 1.0);
  EXPECT_FALSE(rep.pass());
  EXPECT_EQ(rep.monotone_violations, std::vector<Index>{3});
  t.records[3].mse = 0.25;
  t.records[2].mse = 100.0;
  t.records[3].mse = 50.0;
  t.records[4].mse = 20.0;
  t.records[5].mse = 10.0;
  t.records[1].mse = 200.0;
  t.records[0].mse = 300.0;
  rep = theorem2_monitor(t, 1.0);
  EXPECT_TRUE(rep.monotone_violations.empty());
  EXPECT_FALSE(rep.pass());
  EXPECT_THROW(theorem2_monitor(t, 0.5), InvalidArgument);
}

TEST(Serialization, ReportJsonAndTraceCsv) {
  TrainTrace t;
  t.records.push_back({0, 0.5, 0.25, 0.0});
  t.records.push_back({1, std::nan(""), 0.125, 0.0});
  const auto rep = theorem2_monitor(t, 2.0);
  const auto j = to_json(rep);
  EXPECT_EQ(j["name"], "calibrated");
  EXPECT_EQ(j["constants"]["kappa"], 2.0);
  EXPECT_EQ(j["rows"].size(), 1u);
  EXPECT_EQ(j["rows"][0]["bound"], 88.0);
  EXPECT_EQ(j["pass"], true);
  std::ostringstream csv;
  write_trace_csv(csv, t);
  EXPECT_EQ(csv.str(), "t,loss,mse,seconds\n0,0.5,0.25,0\n1,,0.125,0\n");
  BoundReport inf;
  inf.constants["kappa"] = std::numeric_limits<double>::infinity();
  EXPECT_TRUE(to_json(inf)["constants"]["kappa"].is_null());
}
