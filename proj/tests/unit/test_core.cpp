#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "../oracles.hpp"
#include "glmfit/glm.hpp"
#include "glmfit/linalg.hpp"
#include "glmfit/random.hpp"
#include "glmfit/simplex.hpp"

using namespace glmfit;

namespace {

Matrix gaussian(Index r, Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
  return m;
}

Matrix random_simplex_rows(Index n, Index k, Rng& rng) {
  Matrix y(n, k);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < k; ++j) y(i, j) = -std::log(rng.uniform() + 1e-300);
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

}  // namespace

// ---------------------------------------------------------------- random

TEST(Random, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(42), d(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(c.normal(), d.normal());
}

TEST(Random, UniformInUnitIntervalAndNormalMoments) {
  Rng rng(7);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Random, PermutationAndSampling) {
  Rng rng(3);
  auto p = rng.permutation(50);
  std::vector<std::size_t> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  auto s = rng.sample_without_replacement(100, 30);
  std::sort(s.begin(), s.end());
  EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
  EXPECT_EQ(s.size(), 30u);
  EXPECT_LT(s.back(), 100u);
}

// ---------------------------------------------------------------- linalg

TEST(SecondMoment, SingleSampleOuterProduct) {
  Matrix x(1, 2);
  x << 1, 0;
  const auto s = accumulate_second_moment(x);
  Matrix expect(2, 2);
  expect << 1, 0, 0, 0;
  EXPECT_EQ(s.matrix, expect);
  EXPECT_EQ(s.n, 1);
  EXPECT_EQ(s.ridge, 0.0);
}

TEST(SecondMoment, IdentityRowsGiveHalfIdentity) {
  const Matrix x = Matrix::Identity(2, 2);
  const auto s = accumulate_second_moment(x);
  EXPECT_EQ(s.matrix, 0.5 * Matrix::Identity(2, 2));
}

TEST(SecondMoment, MatchesTripleLoopOracle) {
  Rng rng(11);
  const Matrix x = gaussian(5, 3, rng);
  const auto s = accumulate_second_moment(x);
  EXPECT_LE((s.matrix - oracle::second_moment(x)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(s.matrix, s.matrix.transpose());
}

TEST(SecondMoment, EmptyInputIsAnError) {
  const Matrix x(0, 3);
  try {
    accumulate_second_moment(x);
    FAIL() << "expected an error";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("no examples"), std::string::npos);
  }
}

TEST(SecondMoment, ChunkMergeEqualsWholeAndThreadsAreBitIdentical) {
  Rng rng(5);
  const Matrix x = gaussian(9000, 7, rng);
  const auto whole = accumulate_second_moment(x);
  const auto a = accumulate_second_moment(Matrix(x.topRows(2500)));
  const auto b = accumulate_second_moment(Matrix(x.bottomRows(6500)));
  const auto merged = merge_second_moments(a, b);
  EXPECT_LE((whole.matrix - merged.matrix).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(merged.n, 9000);
  const auto threaded = accumulate_second_moment(x, 4);
  EXPECT_EQ(threaded.matrix, whole.matrix);
}

TEST(SecondMoment, SparseMatchesDense) {
  Rng rng(9);
  Matrix x = gaussian(40, 6, rng);
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < x.cols(); ++j)
      if (rng.uniform() < 0.6) x(i, j) = 0.0;
  const SparseMatrix xs = x.sparseView();
  EXPECT_LE((accumulate_second_moment(xs).matrix - accumulate_second_moment(x).matrix).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(SolveSpd, IdentitySystem) {
  SecondMoment s{Matrix::Identity(3, 3), 1, 0.0};
  Rng rng(1);
  const Matrix b = gaussian(3, 2, rng);
  EXPECT_LE((solve_spd(s, b) - b).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SolveSpd, DiagonalSystem) {
  Matrix m = Matrix::Zero(2, 2);
  m.diagonal() << 2, 4;
  Matrix b(2, 1);
  b << 2, 4;
  const Matrix z = solve_spd(SecondMoment{m, 1, 0.0}, b);
  EXPECT_NEAR(z(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(z(1, 0), 1.0, 1e-15);
}

TEST(SolveSpd, RandomResidualWithRidge) {
  Rng rng(21);
  const Matrix a = gaussian(6, 6, rng);
  for (double ridge : {0.0, 0.3}) {
    SecondMoment s{a * a.transpose() + 0.1 * Matrix::Identity(6, 6), 6, ridge};
    const Matrix b = gaussian(6, 3, rng);
    const Matrix z = solve_spd(s, b);
    const Matrix resid = (s.matrix + ridge * Matrix::Identity(6, 6)) * z - b;
    EXPECT_LE(resid.cwiseAbs().maxCoeff(), 1e-10 * (b.norm() + 1.0));
  }
}

TEST(SolveSpd, NonPositiveDefiniteNamesPivot) {
  Matrix m = Matrix::Identity(3, 3);
  m(2, 2) = 0.0;
  try {
    SpdFactor f(SecondMoment{m, 1, 0.0});
    FAIL() << "expected a numerical error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("pivot at index 2"), std::string::npos) << e.what();
  }
}

TEST(SolveSpd, DefaultFloorIsReported) {
  Matrix m = Matrix::Identity(3, 3);
  m(2, 2) = 0.0;
  SpdFactor f(SecondMoment{m, 1, 0.0}, RidgeFallback::kDefaultFloor);
  EXPECT_TRUE(f.ridge_substituted());
  EXPECT_DOUBLE_EQ(f.ridge(), 1e-8 * 2.0 / 3.0);
}

TEST(Spectrum, IdentityAndDiagonal) {
  const auto r1 = top_singular_values(Matrix(Matrix::Identity(3, 3)), 3);
  EXPECT_EQ(r1.singular_values, (std::vector<double>{1, 1, 1}));
  ASSERT_TRUE(r1.condition_proxy.has_value());
  EXPECT_DOUBLE_EQ(*r1.condition_proxy, 1.0);
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 3, 2, 1;
  const auto r2 = top_singular_values(d, 3);
  EXPECT_NEAR(r2.singular_values[0], 3, 1e-14);
  EXPECT_NEAR(r2.singular_values[2], 1, 1e-14);
  EXPECT_NEAR(*r2.condition_proxy, 2.0, 1e-14);
}

TEST(Spectrum, RandomMatchesFullSvdAndRowPermutation) {
  Rng rng(4);
  const Matrix x = gaussian(20, 8, rng);
  const auto rep = top_singular_values(x, 8);
  const auto ref = oracle::singular_values(x);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(rep.singular_values[i], ref[i], 1e-8 * ref[i]);
  for (std::size_t i = 1; i < rep.singular_values.size(); ++i)
    EXPECT_GE(rep.singular_values[i - 1], rep.singular_values[i]);
  const auto perm = rng.permutation(20);
  const Matrix xp = detail::gather_rows(x, perm);
  const auto rp = top_singular_values(xp, 8);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(rp.singular_values[i], rep.singular_values[i], 1e-12 * ref[0]);
}

TEST(Spectrum, Errors) {
  const Matrix x = Matrix::Identity(3, 3);
  EXPECT_THROW(top_singular_values(x, 0), InvalidArgument);
  EXPECT_THROW(top_singular_values(x, 4), InvalidArgument);
  const auto r1 = top_singular_values(x, 1);
  EXPECT_FALSE(r1.condition_proxy.has_value());
}

TEST(Spectrum, SparseWidePathMatchesDense) {
  Rng rng(8);
  Matrix x = Matrix::Zero(60, 90000);
  for (Index i = 0; i < 60; ++i)
    for (int e = 0; e < 20; ++e) x(i, static_cast<Index>(rng.below(90000))) = rng.uniform(0.5, 2.0);
  const SparseMatrix xs = x.sparseView();
  const auto sparse_rep = top_singular_values(xs, 10);
  const auto ref = oracle::singular_values(Matrix(x * x.transpose()).selfadjointView<Eigen::Lower>());
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(sparse_rep.singular_values[i], std::sqrt(ref[i]), 1e-8 * std::sqrt(ref[0]));
}

// ---------------------------------------------------------------- glm

TEST(Softmax, UniformAtZero) {
  const Vector p = softmax_link(Vector::Zero(4));
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p(i), 0.25);
}

TEST(Softmax, SaturatesWithoutOverflow) {
  Vector u(2);
  u << 100, 0;
  const Vector p = softmax_link(u);
  EXPECT_NEAR(p(0), 1.0, 1e-20);
  EXPECT_NEAR(p(1), 0.0, 1e-20);
  EXPECT_GT(p(1), 0.0);
  u << 1000, -1000;
  EXPECT_TRUE(softmax_link(u).allFinite());
}

TEST(Softmax, IsGradientOfLogSumExpAndOnSimplex) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector u = gaussian(5, 1, rng, 2.0);
    const Vector p = softmax_link(u);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_GT(p.minCoeff(), 0.0);
    const Matrix fd = oracle::finite_difference([](const Matrix& v) { return oracle::log_sum_exp(v); }, Matrix(u));
    EXPECT_LE((fd - Matrix(p)).cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_LE((p - oracle::softmax(u)).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Link, LipschitzAndMonotonicityOnSampledPairs) {
  Rng rng(13);
  for (const auto& link : {identity_link(), softmax_link_spec(), softmax_link_spec(true)}) {
    for (int trial = 0; trial < 500; ++trial) {
      const Vector u = gaussian(4, 1, rng, 3.0), v = gaussian(4, 1, rng, 3.0);
      const Vector gu = link.grad(u), gv = link.grad(v);
      EXPECT_LE((gu - gv).norm(), link.lipschitz * (u - v).norm() + 1e-12);
      EXPECT_GE((gu - gv).dot(u - v), link.strong_mono * (u - v).squaredNorm() - 1e-12);
    }
  }
  EXPECT_EQ(identity_link().condition(), 1.0);
  EXPECT_TRUE(std::isinf(softmax_link_spec().condition()));
  EXPECT_THROW(link_by_name("probit"), InvalidArgument);
  EXPECT_EQ(link_by_name("logistic").name, "softmax");
  EXPECT_EQ(link_by_name("linear").name, "identity");
}

TEST(Loss, SoftmaxAtZeroIsLogK) {
  Rng rng(2);
  const Matrix x = gaussian(30, 4, rng);
  const Matrix y = random_simplex_rows(30, 6, rng);
  LabeledBatch<Matrix> b(x, y);
  EXPECT_NEAR(loss(softmax_link_spec(), Matrix::Zero(6, 4), b), std::log(6.0), 1e-15);
  EXPECT_EQ(loss(identity_link(), Matrix::Zero(6, 4), b), 0.0);
}

TEST(Loss, MatchesDirectSummation) {
  Rng rng(14);
  const Matrix x = gaussian(12, 3, rng);
  const Matrix y = random_simplex_rows(12, 4, rng);
  const Matrix w = gaussian(4, 3, rng);
  LabeledBatch<Matrix> b(x, y);
  EXPECT_NEAR(loss(softmax_link_spec(), w, b), oracle::calibrated_loss(oracle::log_sum_exp, w, x, y), 1e-12);
  auto half_sq = [](const Vector& u) { return 0.5 * u.squaredNorm(); };
  EXPECT_NEAR(loss(identity_link(), w, b), oracle::calibrated_loss(half_sq, w, x, y), 1e-12);
}

TEST(Loss, ShapeMismatchIsAnError) {
  const Matrix x = Matrix::Ones(3, 2);
  const Matrix y = Matrix::Constant(3, 2, 0.5);
  LabeledBatch<Matrix> b(x, y);
  EXPECT_THROW(loss(identity_link(), Matrix::Zero(2, 3), b), InvalidArgument);
  EXPECT_THROW(loss(identity_link(), Matrix::Zero(3, 2), b), InvalidArgument);
  const Matrix y4 = Matrix::Constant(4, 2, 0.5);
  EXPECT_THROW((LabeledBatch<Matrix>(x, y4)), InvalidArgument);
}

TEST(Gradient, SingleExampleHandValue) {
  Matrix x(1, 1), y(1, 1), w(1, 1);
  x << 1;
  y << 0;
  w << 2;
  const Matrix g = loss_gradient(identity_link(), w, LabeledBatch<Matrix>(x, y));
  EXPECT_EQ(g(0, 0), 2.0);
}

TEST(Gradient, MatchesFiniteDifferences) {
  Rng rng(15);
  for (const auto& link : {identity_link(), softmax_link_spec()}) {
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix x = gaussian(25, 5, rng);
      const Matrix y = random_simplex_rows(25, 3, rng);
      const Matrix w = gaussian(3, 5, rng, 0.7);
      LabeledBatch<Matrix> b(x, y);
      const Matrix g = loss_gradient(link, w, b);
      const Matrix fd = oracle::finite_difference([&](const Matrix& v) { return loss(link, v, b); }, w);
      EXPECT_LE((g - fd).norm(), 1e-5 * std::max(1.0, fd.norm())) << link.name;
    }
  }
}

TEST(Gradient, VanishesAtTheGeneratingWeights) {
  Rng rng(16);
  const Matrix x = gaussian(50, 4, rng);
  const Matrix wstar = gaussian(3, 4, rng);
  for (const auto& link : {identity_link(), softmax_link_spec()}) {
    const Matrix y = link.grad_rows(scores(wstar, x));
    const Matrix g = loss_gradient(link, wstar, LabeledBatch<Matrix>(x, y));
    EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0) << link.name;
  }
}

TEST(Loss, ConvexAlongSegmentsAndIdentityClosedForm) {
  Rng rng(17);
  const Matrix x = gaussian(40, 3, rng);
  const Matrix y = random_simplex_rows(40, 4, rng);
  LabeledBatch<Matrix> b(x, y);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix w1 = gaussian(4, 3, rng), w2 = gaussian(4, 3, rng);
    const double th = rng.uniform();
    for (const auto& link : {identity_link(), softmax_link_spec()}) {
      EXPECT_LE(loss(link, th * w1 + (1 - th) * w2, b), th * loss(link, w1, b) + (1 - th) * loss(link, w2, b) + 1e-10);
    }
    const Matrix u = scores(w1, x);
    const double closed = (0.5 * u.rowwise().squaredNorm().sum() - (y.array() * u.array()).sum()) / 40.0;
    EXPECT_NEAR(loss(identity_link(), w1, b) - loss(identity_link(), Matrix::Zero(4, 3), b), closed, 1e-13);
  }
}

TEST(Loss, SparseAndDenseAgree) {
  Rng rng(18);
  Matrix x = gaussian(30, 6, rng);
  for (Index i = 0; i < 30; ++i) x(i, static_cast<Index>(rng.below(6))) = 0;
  const SparseMatrix xs = x.sparseView();
  const Matrix y = random_simplex_rows(30, 3, rng);
  const Matrix w = gaussian(3, 6, rng);
  const auto ed = evaluate(softmax_link_spec(), w, LabeledBatch<Matrix>(x, y));
  const auto es = evaluate(softmax_link_spec(), w, LabeledBatch<SparseMatrix>(xs, y));
  EXPECT_NEAR(ed.loss, es.loss, 1e-14);
  EXPECT_LE((ed.gradient - es.gradient).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Argmax, TiesGoToLowestIndex) {
  Matrix m(3, 3);
  m << 1, 1, 1, 0, 2, 2, 3, 1, 3;
  EXPECT_EQ(argmax_rows(m), (std::vector<Index>{0, 1, 0}));
}

TEST(SimplexRows, RequireDetectsViolations) {
  Matrix y(2, 2);
  y << 0.5, 0.5, 0.7, 0.2;
  EXPECT_THROW(require_simplex_rows(y), InvalidArgument);
  y(1, 1) = 0.3;
  EXPECT_NO_THROW(require_simplex_rows(y));
}

// ---------------------------------------------------------------- simplex

TEST(Simplex, HandExamples) {
  Vector v(2);
  v << 0.5, 0.5;
  EXPECT_EQ(project_simplex(v), v);
  v << 1, 1;
  const Vector p = project_simplex(v);
  EXPECT_DOUBLE_EQ(p(0), 0.5);
  EXPECT_DOUBLE_EQ(p(1), 0.5);
  Vector w(3);
  w << 0.9, 0.3, -0.2;
  const Vector q = project_simplex(w);
  EXPECT_NEAR(q(0), 0.8, 1e-15);
  EXPECT_NEAR(q(1), 0.2, 1e-15);
  EXPECT_EQ(q(2), 0.0);
  EXPECT_LE((q - oracle::simplex_by_supports(w)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Simplex, Errors) {
  EXPECT_THROW(project_simplex(Vector(0)), InvalidArgument);
  Vector v(2);
  v << std::nan(""), 1;
  EXPECT_THROW(project_simplex(v), InvalidArgument);
}

TEST(Simplex, SingleEntryIsOne) {
  Vector v(1);
  v << -3.5;
  EXPECT_EQ(project_simplex(v)(0), 1.0);
}

TEST(Simplex, PropertiesOnRandomVectors) {
  Rng rng(19);
  for (Index k : {2, 3, 4, 6, 9, 20}) {
    for (int trial = 0; trial < 300; ++trial) {
      const Vector v = gaussian(k, 1, rng, 2.0);
      const Vector u = gaussian(k, 1, rng, 2.0);
      const Vector p = project_simplex(v);
      EXPECT_GE(p.minCoeff(), 0.0);
      EXPECT_NEAR(p.sum(), 1.0, 1e-12);
      if (k <= 6) {
        EXPECT_LE((p - oracle::simplex_by_supports(v)).cwiseAbs().maxCoeff(), 1e-8);
      }
      EXPECT_LE(oracle::simplex_kkt_residual(v, p), 1e-8);
      EXPECT_EQ(project_simplex(p), p);
      EXPECT_LE((project_simplex(u) - p).norm(), (u - v).norm() + 1e-12);
      const Vector y = random_simplex_rows(1, k, rng).transpose();
      EXPECT_LE((p - y).squaredNorm(), (v - y).squaredNorm() + 1e-12);
    }
  }
}

TEST(Simplex, RowsInPlace) {
  Matrix m(2, 3);
  m << 1, 1, 1, 0.9, 0.3, -0.2;
  project_rows_onto_simplex(m);
  EXPECT_NEAR(m(0, 0), 1.0 / 3, 1e-15);
  EXPECT_NEAR(m(1, 0), 0.8, 1e-15);
}
