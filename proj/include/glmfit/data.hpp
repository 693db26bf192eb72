#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "glmfit/glm.hpp"
#include "glmfit/linalg.hpp"
#include "glmfit/random.hpp"

namespace glmfit {

/// Features (dense or sparse), one-hot labels and where they came from.
struct Dataset {
  std::variant<Matrix, SparseMatrix> x;
  std::vector<Index> labels;
  Matrix y;  // n x k one-hot
  std::vector<std::string> class_names;
  std::string split;
  std::vector<std::string> provenance;

  bool is_sparse() const { return std::holds_alternative<SparseMatrix>(x); }
  Index rows() const { return std::visit([](const auto& m) { return static_cast<Index>(m.rows()); }, x); }
  Index cols() const { return std::visit([](const auto& m) { return static_cast<Index>(m.cols()); }, x); }
  Index classes() const { return static_cast<Index>(class_names.size()); }

  const Matrix& dense() const { return std::get<Matrix>(x); }
  const SparseMatrix& sparse() const { return std::get<SparseMatrix>(x); }
  Matrix to_dense() const {
    return std::visit([](const auto& m) { return Matrix(m); }, x);
  }
};

inline Matrix one_hot(const std::vector<Index>& labels, Index k) {
  Matrix y = Matrix::Zero(static_cast<Index>(labels.size()), k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    detail::require(labels[i] >= 0 && labels[i] < k, "label index out of range");
    y(static_cast<Index>(i), labels[i]) = 1.0;
  }
  return y;
}

/// Throws unless the dataset's invariants hold.
inline void validate(const Dataset& ds) {
  detail::require(static_cast<Index>(ds.labels.size()) == ds.rows(), "dataset: label count differs from row count");
  detail::require(ds.y.rows() == ds.rows() && ds.y.cols() == ds.classes(), "dataset: label matrix shape mismatch");
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    const Index c = ds.labels[i];
    detail::require(c >= 0 && c < ds.classes(), "dataset: class index out of range");
    detail::require(ds.y.row(static_cast<Index>(i)).sum() == 1.0 && ds.y(static_cast<Index>(i), c) == 1.0,
                    "dataset: label row is not one-hot");
  }
}

// ---------------------------------------------------------------------------
// IDX (MNIST container).

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace detail

/// Loads an IDX image/label pair. Pixels are scaled to [0, 1]; labels are one-hot over 10 classes.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (img.size() < 16) throw DataError("idx images '" + images_path + "': truncated header");
  if (lab.size() < 8) throw DataError("idx labels '" + labels_path + "': truncated header");
  if (const auto m = detail::read_be32(img, 0); m != 0x00000803) {
    throw DataError("idx images '" + images_path + "': magic mismatch (expected 0x00000803, found " +
                    detail::hex32(m) + ")");
  }
  if (const auto m = detail::read_be32(lab, 0); m != 0x00000801) {
    throw DataError("idx labels '" + labels_path + "': magic mismatch (expected 0x00000801, found " +
                    detail::hex32(m) + ")");
  }
  const std::size_t n = detail::read_be32(img, 4);
  const std::size_t rows = detail::read_be32(img, 8);
  const std::size_t cols = detail::read_be32(img, 12);
  const std::size_t n_labels = detail::read_be32(lab, 4);
  const std::size_t d = rows * cols;
  if (img.size() < 16 + n * d) {
    throw DataError("idx images '" + images_path + "': truncated payload (expected " + std::to_string(n * d) +
                    " pixel bytes, found " + std::to_string(img.size() - 16) + ")");
  }
  if (lab.size() < 8 + n_labels) {
    throw DataError("idx labels '" + labels_path + "': truncated payload (expected " + std::to_string(n_labels) +
                    " label bytes, found " + std::to_string(lab.size() - 8) + ")");
  }
  if (n != n_labels) {
    throw DataError("idx count mismatch: " + std::to_string(n) + " images but " + std::to_string(n_labels) +
                    " labels");
  }

  Dataset ds;
  Matrix x(static_cast<Index>(n), static_cast<Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      x(static_cast<Index>(i), static_cast<Index>(j)) = static_cast<double>(img[16 + i * d + j]) / 255.0;
    }
  }
  ds.x = std::move(x);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = lab[8 + i];
    if (v > 9) throw DataError("idx labels '" + labels_path + "': label " + std::to_string(v) + " out of range 0..9");
    ds.labels[i] = static_cast<Index>(v);
  }
  for (int c = 0; c < 10; ++c) ds.class_names.push_back(std::to_string(c));
  ds.y = one_hot(ds.labels, 10);
  ds.provenance.push_back("idx:" + images_path + "," + labels_path);
  return ds;
}

// ---------------------------------------------------------------------------
// libsvm text format.

/// Raw label to class index; also the stable ordering of class names.
struct LabelMap {
  std::vector<std::string> names;

  std::optional<Index> find(const std::string& label) const {
    auto it = std::find(names.begin(), names.end(), label);
    if (it == names.end()) return std::nullopt;
    return static_cast<Index>(it - names.begin());
  }
};

namespace detail {

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  // from_chars for double is available in libstdc++ 11.
  const auto* first = s.data();
  if (*first == '+') ++first;
  auto res = std::from_chars(first, s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline bool parse_index(std::string_view s, long long& out) {
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

/// Numeric order when every label parses as a number, lexicographic otherwise.
inline std::vector<std::string> sorted_labels(const std::set<std::string>& seen) {
  std::vector<std::string> names(seen.begin(), seen.end());
  bool numeric = true;
  for (const auto& s : names) {
    double v = 0;
    numeric = numeric && parse_double(s, v);
  }
  if (numeric) {
    std::stable_sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
      double va = 0, vb = 0;
      parse_double(a, va);
      parse_double(b, vb);
      return va < vb;
    });
  }
  return names;
}

struct LibsvmRows {
  std::vector<std::vector<std::string>> labels;
  std::vector<Eigen::Triplet<double>> entries;
  Index rows = 0;
  Index max_col = 0;
};

inline LibsvmRows parse_libsvm(std::istream& in, const std::string& source) {
  LibsvmRows out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
    std::vector<std::string> labels;
    std::string_view lab = tokens[0];
    while (!lab.empty()) {
      const auto comma = lab.find(',');
      labels.emplace_back(lab.substr(0, comma));
      if (labels.back().empty()) throw DataError(where() + "empty label");
      if (comma == std::string_view::npos) break;
      lab.remove_prefix(comma + 1);
    }
    if (labels.size() == 1) {
      double v = 0;
      if (tokens[0].find(':') != std::string_view::npos) throw DataError(where() + "missing label");
      (void)v;
    }
    long long prev = 0;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      const auto colon = tokens[t].find(':');
      if (colon == std::string_view::npos) {
        throw DataError(where() + "expected idx:value, found '" + std::string(tokens[t]) + "'");
      }
      long long idx = 0;
      double val = 0;
      if (!parse_index(tokens[t].substr(0, colon), idx)) {
        throw DataError(where() + "non-numeric feature index '" + std::string(tokens[t].substr(0, colon)) + "'");
      }
      if (!parse_double(tokens[t].substr(colon + 1), val)) {
        throw DataError(where() + "non-numeric feature value '" + std::string(tokens[t].substr(colon + 1)) + "'");
      }
      if (idx < 1) throw DataError(where() + "feature indices are 1-based, found " + std::to_string(idx));
      if (idx <= prev) throw DataError(where() + "feature indices must be strictly ascending");
      prev = idx;
      out.entries.emplace_back(out.rows, static_cast<Index>(idx - 1), val);
      out.max_col = std::max<Index>(out.max_col, static_cast<Index>(idx));
    }
    out.labels.push_back(std::move(labels));
    ++out.rows;
  }
  return out;
}

}  // namespace detail

/// Parses "label idx:val ..." lines (1-based ascending indices) into a sparse
/// dataset. Labels map to contiguous classes in sorted order unless `map` is
/// given (use the training map when loading a test split).
inline Dataset load_libsvm(std::istream& in, Index n_features_hint = 0, const LabelMap* map = nullptr,
                           const std::string& source = "<stream>") {
  auto rows = detail::parse_libsvm(in, source);
  LabelMap labels;
  if (map != nullptr) {
    labels = *map;
  } else {
    std::set<std::string> seen;
    for (const auto& l : rows.labels) {
      if (l.size() != 1) throw DataError(source + ": multi-label row in a single-label file");
      seen.insert(l[0]);
    }
    labels.names = detail::sorted_labels(seen);
  }
  Dataset ds;
  const Index d = std::max(n_features_hint, rows.max_col);
  SparseMatrix x(rows.rows, d);
  x.setFromTriplets(rows.entries.begin(), rows.entries.end());
  x.makeCompressed();
  ds.x = std::move(x);
  for (std::size_t i = 0; i < rows.labels.size(); ++i) {
    if (rows.labels[i].size() != 1) {
      throw DataError(source + ": row " + std::to_string(i + 1) + " has multiple labels");
    }
    auto c = labels.find(rows.labels[i][0]);
    if (!c) throw DataError(source + ": row " + std::to_string(i + 1) + " has unknown label '" + rows.labels[i][0] + "'");
    ds.labels.push_back(*c);
  }
  ds.class_names = labels.names;
  ds.y = one_hot(ds.labels, ds.classes());
  ds.provenance.push_back("libsvm:" + source);
  return ds;
}

inline Dataset load_libsvm(const std::string& path, Index n_features_hint = 0, const LabelMap* map = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return load_libsvm(in, n_features_hint, map, path);
}

/// Multi-label corpus (comma-separated labels), e.g. an RCV1 export.
struct MultilabelCorpus {
  SparseMatrix x;
  std::vector<std::vector<std::string>> labels;
};

inline MultilabelCorpus load_libsvm_multilabel(const std::string& path, Index n_features_hint = 0) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  auto rows = detail::parse_libsvm(in, path);
  MultilabelCorpus c;
  c.x.resize(rows.rows, std::max(n_features_hint, rows.max_col));
  c.x.setFromTriplets(rows.entries.begin(), rows.entries.end());
  c.labels = std::move(rows.labels);
  return c;
}

/// Keeps rows carrying exactly one of `wanted` (multi-category stories are
/// dropped) and labels them by position in `wanted`. For RCV1 pass
/// {"CCAT", "ECAT", "GCAT", "MCAT"}.
inline Dataset single_label_subset(const MultilabelCorpus& corpus, const std::vector<std::string>& wanted) {
  std::vector<Index> keep;
  std::vector<Index> cls;
  for (std::size_t i = 0; i < corpus.labels.size(); ++i) {
    Index hit = -1;
    int hits = 0;
    for (std::size_t w = 0; w < wanted.size(); ++w) {
      if (std::find(corpus.labels[i].begin(), corpus.labels[i].end(), wanted[w]) != corpus.labels[i].end()) {
        ++hits;
        hit = static_cast<Index>(w);
      }
    }
    if (hits == 1) {
      keep.push_back(static_cast<Index>(i));
      cls.push_back(hit);
    }
  }
  const Eigen::SparseMatrix<double, Eigen::RowMajor> xr = corpus.x;
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t r = 0; r < keep.size(); ++r) {
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(xr, keep[r]); it; ++it) {
      trip.emplace_back(static_cast<Index>(r), it.col(), it.value());
    }
  }
  Dataset ds;
  SparseMatrix x(static_cast<Index>(keep.size()), corpus.x.cols());
  x.setFromTriplets(trip.begin(), trip.end());
  ds.x = std::move(x);
  ds.labels = cls;
  ds.class_names = wanted;
  ds.y = one_hot(ds.labels, ds.classes());
  ds.provenance.push_back("single-label subset over " + std::to_string(wanted.size()) + " categories");
  return ds;
}

// ---------------------------------------------------------------------------
// Text transforms.

/// Entrywise log(1 + c) on the stored nonzeros.
inline SparseMatrix log_tf(const SparseMatrix& counts) {
  SparseMatrix out = counts;
  for (Index j = 0; j < out.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(out, j); it; ++it) {
      if (it.value() < 0.0) {
        throw InvalidArgument("log_tf: negative count at (" + std::to_string(it.row()) + ", " +
                              std::to_string(it.col()) + ")");
      }
      it.valueRef() = std::log1p(it.value());
    }
  }
  return out;
}

inline Dataset log_tf(Dataset ds) {
  ds.x = log_tf(ds.sparse());
  ds.provenance.push_back("log_tf");
  return ds;
}

struct PrunedSplits {
  Dataset train;
  Dataset test;
  std::vector<Index> kept_columns;  // new column j was old column kept_columns[j]
};

/// Drops columns whose total count over the training split is below
/// `min_count` from both splits. Apply to raw counts, before log_tf.
inline PrunedSplits prune_rare_terms(const Dataset& train, const Dataset& test, double min_count = 3.0) {
  detail::require(train.is_sparse() && test.is_sparse(), "prune_rare_terms: expects sparse datasets");
  detail::require(train.cols() == test.cols(), "prune_rare_terms: splits differ in width");
  const Vector totals = Matrix(train.sparse().transpose() * Vector::Ones(train.rows()));
  PrunedSplits out;
  std::vector<Index> remap(static_cast<std::size_t>(train.cols()), -1);
  for (Index j = 0; j < train.cols(); ++j) {
    if (totals(j) >= min_count) {
      remap[static_cast<std::size_t>(j)] = static_cast<Index>(out.kept_columns.size());
      out.kept_columns.push_back(j);
    }
  }
  auto select = [&](const Dataset& ds) {
    Dataset r = ds;
    std::vector<Eigen::Triplet<double>> trip;
    const SparseMatrix& x = ds.sparse();
    for (Index j = 0; j < x.outerSize(); ++j) {
      const Index nj = remap[static_cast<std::size_t>(j)];
      if (nj < 0) continue;
      for (SparseMatrix::InnerIterator it(x, j); it; ++it) trip.emplace_back(it.row(), nj, it.value());
    }
    SparseMatrix nx(x.rows(), static_cast<Index>(out.kept_columns.size()));
    nx.setFromTriplets(trip.begin(), trip.end());
    r.x = std::move(nx);
    r.provenance.push_back("prune_rare_terms(min_count=" + std::to_string(min_count) + ")");
    return r;
  };
  out.train = select(train);
  out.test = select(test);
  return out;
}

/// Seeded split into the first n_train rows of a permutation and the rest.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, Index n_train, std::uint64_t seed) {
  detail::require(n_train >= 1 && n_train < ds.rows(), "split_train_test: n_train must be in [1, n)");
  Rng rng(seed);
  const auto perm = rng.permutation(static_cast<std::size_t>(ds.rows()));
  auto take = [&](std::size_t begin, std::size_t end, const std::string& tag) {
    std::vector<std::size_t> rows(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                                  perm.begin() + static_cast<std::ptrdiff_t>(end));
    std::sort(rows.begin(), rows.end());
    Dataset r;
    r.class_names = ds.class_names;
    r.split = tag;
    r.provenance = ds.provenance;
    r.provenance.push_back("split(seed=" + std::to_string(seed) + ")");
    for (auto i : rows) r.labels.push_back(ds.labels[i]);
    r.y = one_hot(r.labels, r.classes());
    if (ds.is_sparse()) {
      const Eigen::SparseMatrix<double, Eigen::RowMajor> xr = ds.sparse();
      std::vector<Eigen::Triplet<double>> trip;
      for (std::size_t r2 = 0; r2 < rows.size(); ++r2) {
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(xr, static_cast<Index>(rows[r2])); it; ++it) {
          trip.emplace_back(static_cast<Index>(r2), it.col(), it.value());
        }
      }
      SparseMatrix x(static_cast<Index>(rows.size()), ds.cols());
      x.setFromTriplets(trip.begin(), trip.end());
      r.x = std::move(x);
    } else {
      r.x = detail::gather_rows(ds.dense(), rows);
    }
    return r;
  };
  return {take(0, static_cast<std::size_t>(n_train), "train"),
          take(static_cast<std::size_t>(n_train), perm.size(), "test")};
}

// ---------------------------------------------------------------------------
// Canonical binary container "GLMD".
//
// Layout (little-endian): "GLMD", u32 version, u64 n, u64 d, u64 k, u8 sparse
// flag, then n rows (dense: d f64; sparse: u64 nnz then nnz x (u64 col, f64)),
// then n u64 class indices, k class names, the split tag and provenance
// strings (each u64 length + bytes). k = 0 marks a bare matrix block.

namespace detail {

inline constexpr std::uint32_t kGlmdVersion = 1;

template <class T>
void write_le(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw DataError("glmd: truncated stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_le<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto len = read_le<std::uint64_t>(in);
  if (len > (1ULL << 32)) throw DataError("glmd: implausible string length");
  std::string s(len, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(len))) throw DataError("glmd: truncated string");
  return s;
}

inline void write_header(std::ostream& out, Index n, Index d, Index k, bool sparse) {
  out.write("GLMD", 4);
  write_le<std::uint32_t>(out, kGlmdVersion);
  write_le<std::uint64_t>(out, static_cast<std::uint64_t>(n));
  write_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  write_le<std::uint64_t>(out, static_cast<std::uint64_t>(k));
  write_le<std::uint8_t>(out, sparse ? 1 : 0);
}

struct GlmdHeader {
  Index n = 0, d = 0, k = 0;
  bool sparse = false;
};

inline GlmdHeader read_header(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "GLMD", 4) != 0) throw DataError("glmd: bad magic");
  const auto version = read_le<std::uint32_t>(in);
  if (version != kGlmdVersion) throw DataError("glmd: unsupported version " + std::to_string(version));
  GlmdHeader h;
  h.n = static_cast<Index>(read_le<std::uint64_t>(in));
  h.d = static_cast<Index>(read_le<std::uint64_t>(in));
  h.k = static_cast<Index>(read_le<std::uint64_t>(in));
  h.sparse = read_le<std::uint8_t>(in) != 0;
  return h;
}

inline void write_dense_rows(std::ostream& out, const Matrix& x) {
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) write_le<double>(out, x(i, j));
  }
}

inline Matrix read_dense_rows(std::istream& in, Index n, Index d) {
  Matrix x(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) x(i, j) = read_le<double>(in);
  }
  return x;
}

}  // namespace detail

/// Bare dense matrix block (k = 0, no labels).
inline void write_matrix_block(std::ostream& out, const Matrix& m) {
  detail::write_header(out, m.rows(), m.cols(), 0, false);
  detail::write_dense_rows(out, m);
}

inline Matrix read_matrix_block(std::istream& in) {
  const auto h = detail::read_header(in);
  if (h.k != 0 || h.sparse) throw DataError("glmd: expected a bare dense matrix block");
  return detail::read_dense_rows(in, h.n, h.d);
}

inline void write_glmd(std::ostream& out, const Dataset& ds) {
  detail::write_header(out, ds.rows(), ds.cols(), ds.classes(), ds.is_sparse());
  if (ds.is_sparse()) {
    const Eigen::SparseMatrix<double, Eigen::RowMajor> xr = ds.sparse();
    for (Index i = 0; i < xr.rows(); ++i) {
      std::vector<std::pair<Index, double>> row;
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(xr, i); it; ++it) {
        row.emplace_back(it.col(), it.value());
      }
      detail::write_le<std::uint64_t>(out, row.size());
      for (const auto& [c, v] : row) {
        detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(c));
        detail::write_le<double>(out, v);
      }
    }
  } else {
    detail::write_dense_rows(out, ds.dense());
  }
  for (Index c : ds.labels) detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(c));
  for (const auto& name : ds.class_names) detail::write_string(out, name);
  detail::write_string(out, ds.split);
  detail::write_le<std::uint64_t>(out, ds.provenance.size());
  for (const auto& p : ds.provenance) detail::write_string(out, p);
}

inline Dataset read_glmd(std::istream& in) {
  const auto h = detail::read_header(in);
  Dataset ds;
  if (h.sparse) {
    std::vector<Eigen::Triplet<double>> trip;
    for (Index i = 0; i < h.n; ++i) {
      const auto nnz = detail::read_le<std::uint64_t>(in);
      for (std::uint64_t e = 0; e < nnz; ++e) {
        const auto c = static_cast<Index>(detail::read_le<std::uint64_t>(in));
        const double v = detail::read_le<double>(in);
        if (c >= h.d) throw DataError("glmd: column index out of range");
        trip.emplace_back(i, c, v);
      }
    }
    SparseMatrix x(h.n, h.d);
    x.setFromTriplets(trip.begin(), trip.end());
    ds.x = std::move(x);
  } else {
    ds.x = detail::read_dense_rows(in, h.n, h.d);
  }
  if (h.k > 0) {
    for (Index i = 0; i < h.n; ++i) ds.labels.push_back(static_cast<Index>(detail::read_le<std::uint64_t>(in)));
    for (Index c = 0; c < h.k; ++c) ds.class_names.push_back(detail::read_string(in));
    ds.split = detail::read_string(in);
    const auto np = detail::read_le<std::uint64_t>(in);
    for (std::uint64_t p = 0; p < np; ++p) ds.provenance.push_back(detail::read_string(in));
    for (Index c : ds.labels) {
      if (c < 0 || c >= h.k) throw DataError("glmd: class index out of range");
    }
    ds.y = one_hot(ds.labels, h.k);
  }
  return ds;
}

inline void save_glmd(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_glmd(out, ds);
}

inline Dataset load_glmd(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_glmd(in);
}

// ---------------------------------------------------------------------------
// Synthetic GLM data.

enum class NoiseMode { kNoiselessSoft, kMultinomialSample };

struct SyntheticSpec {
  Index n = 500;
  Index d = 10;
  Index k = 5;
  std::string link = "softmax";
  double weight_norm = 1.0;     // ||W*||_F
  std::vector<double> spectrum;  // eigenvalues of Cov(x); empty means all ones
  NoiseMode noise = NoiseMode::kNoiselessSoft;
};

struct SyntheticData {
  Matrix x;  // n x d
  Matrix y;  // n x k: g(W* x) rows, or one-hot draws from them
  std::vector<Index> labels;  // sampled classes, or argmax for soft targets
  Matrix w_star;
  Matrix basis;  // d x d orthogonal basis of the covariance
};

/// x = Q diag(sqrt(spectrum)) z with z standard normal and Q a seeded random
/// orthogonal matrix; W* is Gaussian rescaled to the requested Frobenius norm.
inline SyntheticData synthesize(const SyntheticSpec& spec, std::uint64_t seed) {
  detail::require(spec.n >= 1 && spec.d >= 1 && spec.k >= 1, "synthesize: n, d, k must be positive");
  std::vector<double> spectrum = spec.spectrum.empty() ? std::vector<double>(static_cast<std::size_t>(spec.d), 1.0)
                                                       : spec.spectrum;
  detail::require(static_cast<Index>(spectrum.size()) == spec.d, "synthesize: spectrum length must equal d");
  for (double v : spectrum) detail::require(v > 0.0, "synthesize: spectrum entries must be positive");
  const LinkSpec link = link_by_name(spec.link);
  if (spec.noise == NoiseMode::kMultinomialSample) {
    detail::require(link.name == "softmax", "synthesize: multinomial sampling needs the softmax link");
  }

  Rng rng(seed);
  SyntheticData out;
  Matrix gauss(spec.d, spec.d);
  for (Index j = 0; j < spec.d; ++j) {
    for (Index i = 0; i < spec.d; ++i) gauss(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(gauss);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < spec.d; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  out.basis = q;

  out.w_star.resize(spec.k, spec.d);
  for (Index i = 0; i < spec.k; ++i) {
    for (Index j = 0; j < spec.d; ++j) out.w_star(i, j) = rng.normal();
  }
  out.w_star *= spec.weight_norm / out.w_star.norm();

  Matrix z(spec.n, spec.d);
  for (Index i = 0; i < spec.n; ++i) {
    for (Index j = 0; j < spec.d; ++j) z(i, j) = rng.normal() * std::sqrt(spectrum[static_cast<std::size_t>(j)]);
  }
  out.x = z * q.transpose();

  const Matrix mean = link.grad_rows(scores(out.w_star, out.x));
  if (spec.noise == NoiseMode::kNoiselessSoft) {
    out.y = mean;
    out.labels = argmax_rows(mean);
  } else {
    out.labels.resize(static_cast<std::size_t>(spec.n));
    for (Index i = 0; i < spec.n; ++i) {
      const double u = rng.uniform();
      double acc = 0.0;
      Index c = spec.k - 1;
      for (Index j = 0; j < spec.k; ++j) {
        acc += mean(i, j);
        if (u < acc) {
          c = j;
          break;
        }
      }
      out.labels[static_cast<std::size_t>(i)] = c;
    }
    out.y = one_hot(out.labels, spec.k);
  }
  return out;
}

}  // namespace glmfit
