#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "glmfit/error.hpp"
#include "glmfit/random.hpp"

namespace glmfit {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

template <class T>
inline constexpr bool is_sparse_v =
    std::is_base_of_v<Eigen::SparseMatrixBase<std::decay_t<T>>, std::decay_t<T>>;

/// Empirical second moment (1/n) X^T X with the ridge applied at factorization.
struct SecondMoment {
  Matrix matrix;
  Index n = 0;
  double ridge = 0.0;

  Index dim() const { return matrix.rows(); }
};

namespace detail {

/// Rows per reduction chunk. Fixed so the summation order, and therefore every
/// bit of the result, does not depend on the thread count.
inline constexpr Index kReductionChunk = 4096;

inline void symmetrize_from_lower(Matrix& m) {
  m.template triangularView<Eigen::StrictlyUpper>() = m.transpose();
}

}  // namespace detail

/// Computes (1/n) X^T X. Chunks of rows are reduced in a fixed order; `threads`
/// only controls how many chunk products are formed concurrently.
template <class XMatrix>
SecondMoment accumulate_second_moment(const XMatrix& X, unsigned threads = 1) {
  const Index n = X.rows();
  const Index d = X.cols();
  if (n < 1) throw InvalidArgument("accumulate_second_moment: no examples");

  SecondMoment out;
  out.n = n;
  out.matrix = Matrix::Zero(d, d);

  if constexpr (is_sparse_v<XMatrix>) {
    const SparseMatrix xt = X.transpose();
    out.matrix = Matrix(xt * X) / static_cast<double>(n);
    return out;
  } else {
    const Index chunks = (n + detail::kReductionChunk - 1) / detail::kReductionChunk;
    const Index wave = std::max<Index>(1, std::min<Index>(threads, chunks));
    std::vector<Matrix> partial(static_cast<std::size_t>(wave));
    auto chunk_product = [&](Index c, Matrix& dst) {
      const Index begin = c * detail::kReductionChunk;
      const Index rows = std::min(detail::kReductionChunk, n - begin);
      dst.setZero(d, d);
      dst.template selfadjointView<Eigen::Lower>().rankUpdate(
          X.middleRows(begin, rows).transpose());
    };
    for (Index first = 0; first < chunks; first += wave) {
      const Index count = std::min(wave, chunks - first);
      if (count == 1) {
        chunk_product(first, partial[0]);
      } else {
        std::vector<std::thread> pool;
        for (Index w = 0; w < count; ++w) {
          pool.emplace_back([&, w] { chunk_product(first + w, partial[static_cast<std::size_t>(w)]); });
        }
        for (auto& t : pool) t.join();
      }
      for (Index w = 0; w < count; ++w) {
        out.matrix.template triangularView<Eigen::Lower>() +=
            partial[static_cast<std::size_t>(w)];
      }
    }
    detail::symmetrize_from_lower(out.matrix);
    out.matrix /= static_cast<double>(n);
    return out;
  }
}

/// Sample-size-weighted average of two chunk moments (the associative merge).
inline SecondMoment merge_second_moments(const SecondMoment& a, const SecondMoment& b) {
  detail::require(a.dim() == b.dim(), "merge_second_moments: dimension mismatch");
  SecondMoment out;
  out.n = a.n + b.n;
  out.ridge = a.ridge;
  const double wa = static_cast<double>(a.n) / static_cast<double>(out.n);
  const double wb = static_cast<double>(b.n) / static_cast<double>(out.n);
  out.matrix = wa * a.matrix + wb * b.matrix;
  return out;
}

/// What to do when the unregularized system is not positive definite.
enum class RidgeFallback { kNone, kDefaultFloor };

/// Cholesky factor of (S + ridge I), computed once and reused for every solve.
class SpdFactor {
 public:
  SpdFactor() = default;

  explicit SpdFactor(const SecondMoment& s, RidgeFallback fallback = RidgeFallback::kNone)
      : ridge_(s.ridge) {
    if (s.ridge < 0.0) throw InvalidArgument("solve_spd: ridge must be nonnegative");
    Index pivot = factor(s.matrix, s.ridge);
    if (pivot >= 0 && s.ridge == 0.0 && fallback == RidgeFallback::kDefaultFloor) {
      const double d = static_cast<double>(std::max<Index>(1, s.dim()));
      double floor = 1e-8 * s.matrix.trace() / d;
      if (!(floor > 0.0)) floor = 1e-8;
      pivot = factor(s.matrix, floor);
      if (pivot < 0) {
        ridge_ = floor;
        substituted_ = true;
      }
    }
    if (pivot >= 0) {
      throw NumericalError("solve_spd: matrix is not positive definite (nonpositive pivot at index " +
                           std::to_string(pivot) + ")");
    }
  }

  /// Returns Z with (S + ridge I) Z = B.
  Matrix solve(const Matrix& b) const {
    detail::require(b.rows() == lower_.rows(), "solve_spd: right-hand side has wrong row count");
    Matrix z = lower_.triangularView<Eigen::Lower>().solve(b);
    lower_.triangularView<Eigen::Lower>().transpose().solveInPlace(z);
    return z;
  }

  double ridge() const { return ridge_; }
  /// True when the default ridge floor replaced a failed unregularized factorization.
  bool ridge_substituted() const { return substituted_; }
  Index dim() const { return lower_.rows(); }

 private:
  Index factor(const Matrix& m, double ridge) {
    lower_ = m;
    lower_.diagonal().array() += ridge;
    return Eigen::internal::llt_inplace<double, Eigen::Lower>::blocked(lower_);
  }

  Matrix lower_;
  double ridge_ = 0.0;
  bool substituted_ = false;
};

/// One-shot solve of (S + ridge I) Z = B. Prefer SpdFactor when solving repeatedly.
inline Matrix solve_spd(const SecondMoment& s, const Matrix& b) {
  return SpdFactor(s).solve(b);
}

/// Largest eigenvalue of a symmetric matrix.
inline double max_eigenvalue(const Matrix& sym) {
  if (sym.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

struct SpectrumReport {
  std::vector<double> singular_values;  // descending
  std::optional<double> condition_proxy;  // sigma_2 / sigma_r
  Index rows_used = 0;
  bool subsampled = false;
};

namespace detail {

template <class XMatrix>
Matrix gather_rows(const XMatrix& X, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Index>(rows.size()), X.cols());
  if constexpr (is_sparse_v<XMatrix>) {
    const Eigen::SparseMatrix<double, Eigen::RowMajor> xr = X;
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = xr.row(static_cast<Index>(rows[i]));
  } else {
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = X.row(static_cast<Index>(rows[i]));
  }
  return out;
}

inline std::vector<double> singular_values_from_gram(const Matrix& gram) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  std::vector<double> sv;
  for (Index i = 0; i < gram.rows(); ++i) sv.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(i))));
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

inline Eigen::SparseMatrix<double, Eigen::RowMajor> sparse_rows(const Eigen::SparseMatrix<double, Eigen::RowMajor>& x,
                                                                const std::vector<std::size_t>& rows) {
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(x, static_cast<Index>(rows[i])); it; ++it) {
      trip.emplace_back(static_cast<Index>(i), it.col(), it.value());
    }
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> out(static_cast<Index>(rows.size()), x.cols());
  out.setFromTriplets(trip.begin(), trip.end());
  return out;
}

inline std::vector<double> singular_values_of(const Matrix& x) {
  std::vector<double> sv;
  if (x.size() <= 4'000'000) {
    Eigen::BDCSVD<Matrix> svd(x);
    const Vector s = svd.singularValues();
    sv.assign(s.data(), s.data() + s.size());
  } else {
    // Gram of the short side; relative accuracy ~ eps * (s1/si)^2.
    return singular_values_from_gram(x.rows() <= x.cols() ? Matrix(x * x.transpose()) : Matrix(x.transpose() * x));
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

}  // namespace detail

/// Top-r singular values of X and the proxy sigma_2 / sigma_r. Inputs with more
/// than `row_cap` rows are uniformly subsampled (seeded) before the SVD.
template <class XMatrix>
SpectrumReport top_singular_values(const XMatrix& X, Index r, std::uint64_t seed = 0,
                                   Index row_cap = 10'000) {
  if (r <= 0) throw InvalidArgument("top_singular_values: r must be positive");
  SpectrumReport report;
  std::vector<std::size_t> rows;
  if (X.rows() > row_cap) {
    Rng rng(seed);
    rows = rng.sample_without_replacement(static_cast<std::size_t>(X.rows()), static_cast<std::size_t>(row_cap));
    std::sort(rows.begin(), rows.end());
    report.subsampled = true;
  }
  report.rows_used = report.subsampled ? static_cast<Index>(rows.size()) : X.rows();
  if (r > std::min(report.rows_used, static_cast<Index>(X.cols()))) {
    throw InvalidArgument("top_singular_values: r exceeds min(n, d) of the analysed matrix");
  }
  std::vector<double> sv;
  if constexpr (is_sparse_v<XMatrix>) {
    // Text matrices are wide and sparse: never densify them, use the Gram of the short side.
    Eigen::SparseMatrix<double, Eigen::RowMajor> sub = X;
    if (report.subsampled) sub = detail::sparse_rows(sub, rows);
    if (sub.rows() * sub.cols() <= 4'000'000) {
      sv = detail::singular_values_of(Matrix(sub));
    } else {
      const Matrix gram = sub.rows() <= sub.cols() ? Matrix(sub * sub.transpose()) : Matrix(sub.transpose() * sub);
      sv = detail::singular_values_from_gram(gram);
    }
  } else {
    sv = detail::singular_values_of(report.subsampled ? detail::gather_rows(X, rows) : Matrix(X));
  }
  sv.resize(static_cast<std::size_t>(r));
  report.singular_values = sv;
  if (r >= 2 && sv.back() > 0.0) report.condition_proxy = sv[1] / sv.back();
  return report;
}

}  // namespace glmfit
