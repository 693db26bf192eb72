#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "glmfit/linalg.hpp"
#include "glmfit/random.hpp"

namespace glmfit {

// ---------------------------------------------------------------------------
// Calibration basis G = {g_1, ..., g_m}, each applied elementwise.

struct BasisFunction {
  std::string name;
  std::function<double(double)> fn;
  bool is_identity = false;
};

class CalibrationBasis {
 public:
  CalibrationBasis() = default;
  explicit CalibrationBasis(std::vector<BasisFunction> functions) : functions_(std::move(functions)) {}

  /// {y, y^2, ..., y^degree}.
  static CalibrationBasis polynomial(int degree) {
    detail::require(degree >= 1, "CalibrationBasis::polynomial: degree must be >= 1");
    std::vector<BasisFunction> fs;
    fs.push_back({"y", [](double y) { return y; }, true});
    for (int p = 2; p <= degree; ++p) {
      fs.push_back({"y^" + std::to_string(p), [p](double y) { return std::pow(y, p); }, false});
    }
    return CalibrationBasis(std::move(fs));
  }

  static CalibrationBasis identity() { return polynomial(1); }

  bool contains_identity() const {
    return std::any_of(functions_.begin(), functions_.end(), [](const auto& f) { return f.is_identity; });
  }

  std::size_t size() const { return functions_.size(); }
  bool empty() const { return functions_.empty(); }
  const std::vector<BasisFunction>& functions() const { return functions_; }

 private:
  std::vector<BasisFunction> functions_;
};

/// [g_1(Z) | g_2(Z) | ...], n x (k * m), in basis order.
inline Matrix apply_basis(const CalibrationBasis& basis, const Matrix& z) {
  detail::require(!basis.empty(), "apply_basis: empty basis");
  const Index k = z.cols();
  Matrix out(z.rows(), k * static_cast<Index>(basis.size()));
  for (std::size_t j = 0; j < basis.size(); ++j) {
    const auto& f = basis.functions()[j];
    auto block = out.middleCols(static_cast<Index>(j) * k, k);
    if (f.is_identity) {
      block = z;
    } else {
      block = z.unaryExpr(f.fn);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random Fourier features for exp(-||x - x'||^2 / s).

/// z(x) = sqrt(2/m) cos(omega^T x + b), omega ~ N(0, (2/s) I), b ~ U[0, 2 pi).
struct RffMap {
  Matrix omega;  // d x m
  RowVector phase;
  double bandwidth = 1.0;

  RffMap() = default;

  RffMap(Index input_dim, Index m, double s, std::uint64_t seed) : bandwidth(s) {
    if (!(s > 0.0)) throw InvalidArgument("rff: bandwidth must be positive");
    detail::require(m >= 1, "rff: feature count must be >= 1");
    detail::require(input_dim >= 1, "rff: input dimension must be >= 1");
    Rng rng(seed);
    const double sd = std::sqrt(2.0 / s);
    omega.resize(input_dim, m);
    for (Index j = 0; j < m; ++j) {
      for (Index i = 0; i < input_dim; ++i) omega(i, j) = sd * rng.normal();
    }
    phase.resize(m);
    for (Index j = 0; j < m; ++j) phase(j) = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }

  Index features() const { return omega.cols(); }

  /// Features for every row of x; `extra_cols` zero columns are appended
  /// (callers fill them, e.g. with a bias) to avoid a second n x m copy.
  template <class XMatrix>
  Matrix apply(const XMatrix& x, Index extra_cols = 0) const {
    detail::require(x.cols() == omega.rows(), "rff: input has " + std::to_string(x.cols()) +
                                                  " columns, map expects " + std::to_string(omega.rows()));
    const Index m = omega.cols();
    Matrix out(x.rows(), m + extra_cols);
    out.leftCols(m).noalias() = x * omega;
    const double scale = std::sqrt(2.0 / static_cast<double>(m));
    for (Index j = 0; j < m; ++j) {
      out.col(j) = ((out.col(j).array() + phase(j)).cos() * scale).matrix();
    }
    out.rightCols(extra_cols).setZero();
    return out;
  }
};

template <class XMatrix>
Matrix rff_block(const XMatrix& x, Index m, double s, std::uint64_t seed) {
  return RffMap(x.cols(), m, s, seed).apply(x);
}

enum class BandwidthMode { kMedianSquared, kMedian };

/// Median trick over the pairs of a seeded row subsample. The default returns
/// the median of squared distances, matching the kernel's ||x - x'||^2 / s.
template <class XMatrix>
double median_bandwidth(const XMatrix& x, Index sample_size = 1000, std::uint64_t seed = 0,
                        BandwidthMode mode = BandwidthMode::kMedianSquared) {
  detail::require(x.rows() >= 2, "median_bandwidth: need at least two points");
  Rng rng(seed);
  auto rows = rng.sample_without_replacement(static_cast<std::size_t>(x.rows()),
                                             static_cast<std::size_t>(std::max<Index>(2, sample_size)));
  std::sort(rows.begin(), rows.end());
  const Matrix pts = detail::gather_rows(x, rows);
  const Vector norms = pts.rowwise().squaredNorm();
  const Matrix gram = pts * pts.transpose();
  std::vector<double> dist;
  dist.reserve(rows.size() * (rows.size() - 1) / 2);
  for (Index i = 0; i < pts.rows(); ++i) {
    for (Index j = i + 1; j < pts.rows(); ++j) {
      double d2 = std::max(0.0, norms(i) + norms(j) - 2.0 * gram(i, j));
      dist.push_back(mode == BandwidthMode::kMedianSquared ? d2 : std::sqrt(d2));
    }
  }
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double med = dist[mid];
  if (dist.size() % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
    med = 0.5 * (med + lower);
  }
  if (!(med > 0.0)) throw InvalidArgument("median_bandwidth: degenerate bandwidth (points coincide)");
  return med;
}

// ---------------------------------------------------------------------------
// PCA.

struct Pca {
  RowVector mean;
  Matrix components;  // d x r, columns ordered by descending variance
  Vector variances;
  Index requested = 0;
  std::string warning;

  Index dims() const { return components.cols(); }

  template <class XMatrix>
  Matrix project(const XMatrix& x) const {
    detail::require(x.cols() == mean.size(), "pca: input has " + std::to_string(x.cols()) +
                                                 " columns, basis expects " + std::to_string(mean.size()));
    Matrix centered = Matrix(x);
    centered.rowwise() -= mean;
    return centered * components;
  }

  Matrix reconstruct(const Matrix& projected) const {
    Matrix out = projected * components.transpose();
    out.rowwise() += mean;
    return out;
  }
};

/// Mean-centred principal directions. If r exceeds the numerical rank only
/// rank components are kept and `warning` says so.
template <class XMatrix>
Pca pca_fit(const XMatrix& x, Index r) {
  detail::require(r >= 1, "pca: target dimension must be >= 1");
  detail::require(r <= std::min<Index>(x.rows(), x.cols()), "pca: r exceeds min(n, d)");
  Pca pca;
  pca.requested = r;
  Matrix centered = Matrix(x);
  pca.mean = centered.colwise().mean();
  centered.rowwise() -= pca.mean;
  const Matrix cov = Matrix(centered.transpose() * centered) / static_cast<double>(x.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Index d = cov.rows();
  const double top = std::max(0.0, es.eigenvalues()(d - 1));
  const double tol = top * static_cast<double>(d) * 1e-13;
  Index rank = 0;
  for (Index i = 0; i < d; ++i) rank += es.eigenvalues()(i) > tol ? 1 : 0;
  Index keep = r;
  if (r > rank) {
    keep = rank;
    pca.warning = "requested " + std::to_string(r) + " components but data rank is " +
                  std::to_string(rank) + "; kept " + std::to_string(rank);
  }
  pca.components.resize(d, keep);
  pca.variances.resize(keep);
  for (Index j = 0; j < keep; ++j) {
    pca.components.col(j) = es.eigenvectors().col(d - 1 - j);
    pca.variances(j) = es.eigenvalues()(d - 1 - j);
  }
  return pca;
}

template <class XMatrix>
std::pair<Pca, Matrix> pca_fit_project(const XMatrix& x, Index r) {
  Pca pca = pca_fit(x, r);
  Matrix projected = pca.project(x);
  return {std::move(pca), std::move(projected)};
}

// ---------------------------------------------------------------------------
// Column selection helpers.

template <class XMatrix>
Matrix extract_columns(const XMatrix& x, const std::vector<Index>& cols) {
  Matrix out(x.rows(), static_cast<Index>(cols.size()));
  if constexpr (is_sparse_v<XMatrix>) {
    if constexpr (std::decay_t<XMatrix>::IsRowMajor) {
      const SparseMatrix xc = x;
      return extract_columns(xc, cols);
    } else {
      out.setZero();
      for (std::size_t j = 0; j < cols.size(); ++j) {
        for (typename std::decay_t<XMatrix>::InnerIterator it(x, cols[j]); it; ++it) {
          out(it.row(), static_cast<Index>(j)) = it.value();
        }
      }
    }
  } else {
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = x.col(cols[j]);
  }
  return out;
}

/// ||(1/n) sum_i r_i x_ij||_2 for every column j (norm taken over classes).
template <class XMatrix>
Vector column_gradient_magnitudes(const XMatrix& x, const Matrix& residual) {
  detail::require(x.rows() == residual.rows(), "gradient ranking: residual row count mismatch");
  const Matrix g = Matrix(x.transpose() * residual) / static_cast<double>(x.rows());
  return g.rowwise().norm();
}

/// Columns from `candidates` ordered by descending gradient magnitude; ties keep
/// the lower column index first.
inline std::vector<Index> order_by_magnitude(const Vector& magnitude, std::vector<Index> candidates) {
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](Index a, Index b) { return magnitude(a) > magnitude(b); });
  return candidates;
}

// ---------------------------------------------------------------------------
// Feature generators for stagewise fitting.

enum class GeneratorKind { kIdentity, kSubsetSequential, kSubsetRandom, kSubsetGradient, kRff };

inline std::string to_string(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::kIdentity: return "identity";
    case GeneratorKind::kSubsetSequential: return "subset-sequential";
    case GeneratorKind::kSubsetRandom: return "subset-random";
    case GeneratorKind::kSubsetGradient: return "subset-gradient";
    case GeneratorKind::kRff: return "rff";
  }
  return "?";
}

inline GeneratorKind generator_kind_from_string(const std::string& s) {
  if (s == "identity") return GeneratorKind::kIdentity;
  if (s == "subset-sequential" || s == "sequential") return GeneratorKind::kSubsetSequential;
  if (s == "subset-random" || s == "subset") return GeneratorKind::kSubsetRandom;
  if (s == "subset-gradient" || s == "gradient") return GeneratorKind::kSubsetGradient;
  if (s == "rff") return GeneratorKind::kRff;
  throw InvalidArgument("unknown generator '" + s + "' (expected identity|subset-sequential|subset-random|subset-gradient|rff)");
}

/// When gradient-ordered subsets recompute their ranking.
enum class RerankPolicy { kPerPass, kPerBlock };

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::kSubsetRandom;
  std::uint64_t seed = 0;
  Index block = 512;
  int passes = 1;  // subset kinds: full sweeps over the columns before exhaustion
  double bandwidth = 1.0;  // rff only
  RerankPolicy rerank = RerankPolicy::kPerPass;
};

/// What is needed to regenerate one block on new data.
struct BlockRecord {
  Index call_index = 0;
  std::vector<Index> columns;  // subset / identity kinds
  std::uint64_t block_seed = 0;  // rff kind
  Index width = 0;
};

struct FeatureBlock {
  BlockRecord record;
  Matrix features;
};

/// Rebuilds a block's features from its record.
template <class XMatrix>
Matrix materialize_block(const GeneratorSpec& spec, const BlockRecord& record, const XMatrix& x) {
  if (spec.kind == GeneratorKind::kRff) {
    return RffMap(x.cols(), record.width, spec.bandwidth, record.block_seed).apply(x);
  }
  for (Index c : record.columns) {
    detail::require(c >= 0 && c < x.cols(), "feature block references column " + std::to_string(c) +
                                                " but input has " + std::to_string(x.cols()));
  }
  return extract_columns(x, record.columns);
}

/// Stateful GEN. Blocks are a pure function of (seed, call index, residuals at
/// re-ranking points), so a fresh generator replays the same sequence.
class FeatureGenerator {
 public:
  FeatureGenerator(GeneratorSpec spec, Index input_dim) : spec_(spec), dim_(input_dim) {
    detail::require(spec_.block >= 1, "feature generator: block size must be >= 1");
    detail::require(spec_.passes >= 1, "feature generator: passes must be >= 1");
    detail::require(input_dim >= 1, "feature generator: input has no columns");
    if (spec_.kind == GeneratorKind::kRff && !(spec_.bandwidth > 0.0)) {
      throw InvalidArgument("feature generator: rff bandwidth must be positive");
    }
  }

  const GeneratorSpec& spec() const { return spec_; }
  Index calls() const { return calls_; }
  bool exhausted() const { return exhausted_; }

  /// Next block, or nullopt once a subset generator has used up its passes.
  template <class XMatrix>
  std::optional<FeatureBlock> next(const XMatrix& x, const Matrix& residual) {
    detail::require(x.cols() == dim_, "feature generator: input dimension changed");
    if (exhausted_) return std::nullopt;
    FeatureBlock block;
    block.record.call_index = calls_;
    switch (spec_.kind) {
      case GeneratorKind::kRff:
        block.record.block_seed = splitmix64(spec_.seed + static_cast<std::uint64_t>(calls_));
        block.record.width = spec_.block;
        break;
      case GeneratorKind::kIdentity:
        block.record.columns.resize(static_cast<std::size_t>(dim_));
        std::iota(block.record.columns.begin(), block.record.columns.end(), Index{0});
        block.record.width = dim_;
        exhausted_ = true;
        break;
      case GeneratorKind::kSubsetSequential:
      case GeneratorKind::kSubsetRandom:
      case GeneratorKind::kSubsetGradient:
        block.record.columns = next_subset(x, residual);
        block.record.width = static_cast<Index>(block.record.columns.size());
        if (block.record.columns.empty()) return std::nullopt;
        break;
    }
    block.features = materialize_block(spec_, block.record, x);
    ++calls_;
    return block;
  }

 private:
  template <class XMatrix>
  void start_pass(const XMatrix& x, const Matrix& residual) {
    std::vector<Index> all(static_cast<std::size_t>(dim_));
    std::iota(all.begin(), all.end(), Index{0});
    if (spec_.kind == GeneratorKind::kSubsetRandom) {
      Rng rng(splitmix64(spec_.seed ^ (0x5bd1e995ULL * static_cast<std::uint64_t>(pass_ + 1))));
      const auto perm = rng.permutation(static_cast<std::size_t>(dim_));
      for (std::size_t i = 0; i < perm.size(); ++i) all[i] = static_cast<Index>(perm[i]);
    } else if (spec_.kind == GeneratorKind::kSubsetGradient) {
      all = order_by_magnitude(column_gradient_magnitudes(x, residual), std::move(all));
    }
    order_ = std::move(all);
    cursor_ = 0;
    used_.assign(static_cast<std::size_t>(dim_), false);
  }

  template <class XMatrix>
  std::vector<Index> next_subset(const XMatrix& x, const Matrix& residual) {
    if (order_.empty() || cursor_ >= static_cast<Index>(order_.size())) {
      if (started_) ++pass_;
      if (pass_ >= spec_.passes) {
        exhausted_ = true;
        return {};
      }
      start_pass(x, residual);
      started_ = true;
    } else if (spec_.kind == GeneratorKind::kSubsetGradient && spec_.rerank == RerankPolicy::kPerBlock) {
      std::vector<Index> remaining;
      for (Index c = 0; c < dim_; ++c) {
        if (!used_[static_cast<std::size_t>(c)]) remaining.push_back(c);
      }
      remaining = order_by_magnitude(column_gradient_magnitudes(x, residual), std::move(remaining));
      order_.resize(static_cast<std::size_t>(cursor_));
      order_.insert(order_.end(), remaining.begin(), remaining.end());
    }
    const Index take = std::min<Index>(spec_.block, static_cast<Index>(order_.size()) - cursor_);
    std::vector<Index> cols(order_.begin() + cursor_, order_.begin() + cursor_ + take);
    for (Index c : cols) used_[static_cast<std::size_t>(c)] = true;
    cursor_ += take;
    return cols;
  }

  GeneratorSpec spec_;
  Index dim_ = 0;
  Index calls_ = 0;
  int pass_ = 0;
  bool started_ = false;
  bool exhausted_ = false;
  std::vector<Index> order_;
  Index cursor_ = 0;
  std::vector<bool> used_;
};

}  // namespace glmfit
