#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "glmfit/data.hpp"
#include "glmfit/features.hpp"
#include "glmfit/solvers.hpp"

namespace glmfit {

// ---------------------------------------------------------------------------
// Feature pipeline: [log-tf] -> [PCA] -> [RFF] -> [bias].

struct PipelineSpec {
  bool log_tf = false;
  Index pca_dims = 0;  // 0: off
  Index rff = 0;       // 0: off
  BandwidthMode bandwidth_mode = BandwidthMode::kMedianSquared;
  double bandwidth = 0.0;  // 0: median trick on the (projected) training data
  Index bandwidth_sample = 1000;
  std::uint64_t seed = 0;
  bool bias = false;
};

using FeatureMatrix = std::variant<Matrix, SparseMatrix>;

inline Index feature_rows(const FeatureMatrix& f) {
  return std::visit([](const auto& m) { return static_cast<Index>(m.rows()); }, f);
}
inline Index feature_cols(const FeatureMatrix& f) {
  return std::visit([](const auto& m) { return static_cast<Index>(m.cols()); }, f);
}

/// A pipeline with its fitted state (PCA basis, RFF map, bandwidth).
struct FittedPipeline {
  PipelineSpec spec;
  Index input_dim = 0;
  std::optional<Pca> pca;
  std::optional<RffMap> rff;
  double bandwidth_used = 0.0;

  FeatureMatrix apply(const FeatureMatrix& input) const {
    detail::require(feature_cols(input) == input_dim, "feature pipeline expects " + std::to_string(input_dim) +
                                                          " input columns, got " + std::to_string(feature_cols(input)));
    FeatureMatrix cur = input;
    if (spec.log_tf) {
      detail::require(std::holds_alternative<SparseMatrix>(cur), "log_tf expects sparse count features");
      cur = log_tf(std::get<SparseMatrix>(cur));
    }
    const Index extra = spec.bias ? 1 : 0;
    if (pca) cur = std::visit([&](const auto& m) { return pca->project(m); }, cur);
    if (rff) {
      Matrix out = std::visit([&](const auto& m) { return rff->apply(m, extra); }, cur);
      if (spec.bias) out.col(out.cols() - 1).setOnes();
      return out;
    }
    if (spec.bias) return append_bias(std::move(cur));
    return cur;
  }

  static FeatureMatrix append_bias(FeatureMatrix f) {
    if (auto* d = std::get_if<Matrix>(&f)) {
      Matrix out(d->rows(), d->cols() + 1);
      out.leftCols(d->cols()) = *d;
      out.col(d->cols()).setOnes();
      return out;
    }
    const SparseMatrix& s = std::get<SparseMatrix>(f);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(s.nonZeros() + s.rows()));
    for (Index j = 0; j < s.outerSize(); ++j) {
      for (SparseMatrix::InnerIterator it(s, j); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
    }
    for (Index i = 0; i < s.rows(); ++i) trip.emplace_back(i, s.cols(), 1.0);
    SparseMatrix out(s.rows(), s.cols() + 1);
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
  }
};

inline FittedPipeline fit_pipeline(const PipelineSpec& spec, const FeatureMatrix& train) {
  FittedPipeline p;
  p.spec = spec;
  p.input_dim = feature_cols(train);
  FeatureMatrix cur = train;
  if (spec.log_tf) {
    detail::require(std::holds_alternative<SparseMatrix>(cur), "log_tf expects sparse count features");
    cur = log_tf(std::get<SparseMatrix>(cur));
  }
  if (spec.pca_dims > 0) {
    p.pca = std::visit([&](const auto& m) { return pca_fit(m, spec.pca_dims); }, cur);
    if (spec.rff > 0) cur = std::visit([&](const auto& m) { return p.pca->project(m); }, cur);
  }
  if (spec.rff > 0) {
    p.bandwidth_used = spec.bandwidth > 0.0 ? spec.bandwidth
                                            : std::visit(
                                                  [&](const auto& m) {
                                                    return median_bandwidth(m, spec.bandwidth_sample, spec.seed,
                                                                            spec.bandwidth_mode);
                                                  },
                                                  cur);
    p.rff = RffMap(feature_cols(cur), spec.rff, p.bandwidth_used, splitmix64(spec.seed ^ 0x52ff));
  }
  return p;
}

inline nlohmann::json to_json(const PipelineSpec& s) {
  return {{"log_tf", s.log_tf},
          {"pca_dims", s.pca_dims},
          {"rff", s.rff},
          {"bandwidth_mode", s.bandwidth_mode == BandwidthMode::kMedian ? "median" : "median-squared"},
          {"bandwidth", s.bandwidth},
          {"bandwidth_sample", s.bandwidth_sample},
          {"seed", s.seed},
          {"bias", s.bias}};
}

inline PipelineSpec pipeline_spec_from_json(const nlohmann::json& j) {
  PipelineSpec s;
  s.log_tf = j.at("log_tf").get<bool>();
  s.pca_dims = j.at("pca_dims").get<Index>();
  s.rff = j.at("rff").get<Index>();
  s.bandwidth_mode = j.at("bandwidth_mode").get<std::string>() == "median" ? BandwidthMode::kMedian
                                                                          : BandwidthMode::kMedianSquared;
  s.bandwidth = j.at("bandwidth").get<double>();
  s.bandwidth_sample = j.at("bandwidth_sample").get<Index>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.bias = j.at("bias").get<bool>();
  return s;
}

// ---------------------------------------------------------------------------
// Model file.
//
// "GLMM", u32 version, u64 metadata length, metadata JSON, u64 block count,
// then named blocks (u64 name length, name, GLMD matrix block).

using AnyModel = std::variant<WeightMatrix, CalibratedModel, StagewiseModel>;

struct ModelFile {
  nlohmann::json config;  // the run configuration, embedded verbatim
  FittedPipeline pipeline;
  AnyModel model;
  std::vector<std::string> class_names;
};

inline std::string algorithm_of(const AnyModel& m) {
  if (std::holds_alternative<WeightMatrix>(m)) return "weights";
  if (std::holds_alternative<CalibratedModel>(m)) return "calibrated";
  return "stagewise";
}

inline Index model_input_dim(const AnyModel& m) {
  if (const auto* w = std::get_if<WeightMatrix>(&m)) return w->w.cols();
  if (const auto* c = std::get_if<CalibratedModel>(&m)) return c->input_dim;
  return std::get<StagewiseModel>(m).input_dim;
}

/// Scores on already-transformed features.
template <class XMatrix>
Matrix model_scores(const AnyModel& m, const XMatrix& x) {
  return std::visit([&](const auto& model) { return predict(model, x).scores; }, m);
}

namespace detail {

inline nlohmann::json block_record_json(const BlockRecord& r) {
  return {{"call_index", r.call_index}, {"columns", r.columns}, {"block_seed", r.block_seed}, {"width", r.width}};
}

inline BlockRecord block_record_from_json(const nlohmann::json& j) {
  BlockRecord r;
  r.call_index = j.at("call_index").get<Index>();
  r.columns = j.at("columns").get<std::vector<Index>>();
  r.block_seed = j.at("block_seed").get<std::uint64_t>();
  r.width = j.at("width").get<Index>();
  return r;
}

}  // namespace detail

inline void write_model(std::ostream& out, const ModelFile& mf) {
  nlohmann::json meta;
  std::vector<std::pair<std::string, const Matrix*>> blocks;
  std::vector<Matrix> owned;
  owned.reserve(4);

  meta["config"] = mf.config;
  meta["class_names"] = mf.class_names;
  meta["model"] = algorithm_of(mf.model);
  meta["input_dim"] = model_input_dim(mf.model);

  nlohmann::json pj;
  pj["spec"] = to_json(mf.pipeline.spec);
  pj["input_dim"] = mf.pipeline.input_dim;
  pj["bandwidth_used"] = mf.pipeline.bandwidth_used;
  if (mf.pipeline.pca) {
    pj["pca_dims_kept"] = mf.pipeline.pca->dims();
    pj["pca_warning"] = mf.pipeline.pca->warning;
    owned.push_back(Matrix(mf.pipeline.pca->mean));
    blocks.emplace_back("pca.mean", &owned.back());
    blocks.emplace_back("pca.components", &mf.pipeline.pca->components);
    owned.push_back(Matrix(mf.pipeline.pca->variances));
    blocks.emplace_back("pca.variances", &owned.back());
  }
  if (mf.pipeline.rff) {
    blocks.emplace_back("rff.omega", &mf.pipeline.rff->omega);
    owned.push_back(Matrix(mf.pipeline.rff->phase));
    blocks.emplace_back("rff.phase", &owned.back());
  }
  meta["pipeline"] = pj;

  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, WeightMatrix>) {
          meta["link"] = m.link.name;
          meta["lipschitz"] = m.link.lipschitz;
          meta["feature_meta"] = m.feature_meta;
          blocks.emplace_back("w", &m.w);
        } else if constexpr (std::is_same_v<T, CalibratedModel>) {
          std::vector<std::string> names;
          for (const auto& f : m.basis.functions()) names.push_back(f.name);
          meta["basis"] = names;
          meta["classes"] = m.classes;
          meta["iterations"] = m.xweights.size();
          for (std::size_t t = 0; t < m.xweights.size(); ++t) {
            blocks.emplace_back("x." + std::to_string(t), &m.xweights[t]);
            blocks.emplace_back("cal." + std::to_string(t), &m.calweights[t]);
          }
        } else {
          nlohmann::json g;
          g["kind"] = to_string(m.generator.kind);
          g["seed"] = m.generator.seed;
          g["block"] = m.generator.block;
          g["passes"] = m.generator.passes;
          g["bandwidth"] = m.generator.bandwidth;
          g["rerank"] = m.generator.rerank == RerankPolicy::kPerBlock ? "per-block" : "per-pass";
          meta["generator"] = g;
          meta["inner"] = to_string(m.inner);
          meta["classes"] = m.classes;
          meta["stages"] = nlohmann::json::array();
          for (std::size_t s = 0; s < m.stages.size(); ++s) {
            meta["stages"].push_back(detail::block_record_json(m.stages[s].block));
            blocks.emplace_back("stage." + std::to_string(s), &m.stages[s].w);
          }
        }
      },
      mf.model);

  const std::string text = meta.dump();
  out.write("GLMM", 4);
  detail::write_le<std::uint32_t>(out, 1);
  detail::write_string(out, text);
  detail::write_le<std::uint64_t>(out, blocks.size());
  for (const auto& [name, mat] : blocks) {
    detail::write_string(out, name);
    write_matrix_block(out, *mat);
  }
}

inline ModelFile read_model(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "GLMM") throw DataError("model file: bad magic");
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != 1) throw DataError("model file: unsupported version " + std::to_string(version));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(detail::read_string(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file: bad metadata: ") + e.what());
  }
  std::map<std::string, Matrix> blocks;
  const auto count = detail::read_le<std::uint64_t>(in);
  for (std::uint64_t b = 0; b < count; ++b) {
    std::string name = detail::read_string(in);
    blocks[name] = read_matrix_block(in);
  }
  auto block = [&](const std::string& name) -> const Matrix& {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw DataError("model file: missing block '" + name + "'");
    return it->second;
  };

  ModelFile mf;
  try {
    mf.config = meta.at("config");
    mf.class_names = meta.at("class_names").get<std::vector<std::string>>();
    const auto& pj = meta.at("pipeline");
    mf.pipeline.spec = pipeline_spec_from_json(pj.at("spec"));
    mf.pipeline.input_dim = pj.at("input_dim").get<Index>();
    mf.pipeline.bandwidth_used = pj.at("bandwidth_used").get<double>();
    if (blocks.count("pca.mean")) {
      Pca pca;
      pca.mean = block("pca.mean").row(0);
      pca.components = block("pca.components");
      pca.variances = block("pca.variances").col(0);
      pca.requested = mf.pipeline.spec.pca_dims;
      pca.warning = pj.value("pca_warning", std::string());
      mf.pipeline.pca = std::move(pca);
    }
    if (blocks.count("rff.omega")) {
      RffMap rff;
      rff.omega = block("rff.omega");
      rff.phase = block("rff.phase").row(0);
      rff.bandwidth = mf.pipeline.bandwidth_used;
      mf.pipeline.rff = std::move(rff);
    }

    const std::string kind = meta.at("model").get<std::string>();
    const Index input_dim = meta.at("input_dim").get<Index>();
    if (kind == "weights") {
      WeightMatrix w;
      w.link = link_by_name(meta.at("link").get<std::string>(), meta.at("lipschitz").get<double>() == 0.5);
      w.feature_meta = meta.value("feature_meta", std::string());
      w.w = block("w");
      mf.model = std::move(w);
    } else if (kind == "calibrated") {
      CalibratedModel c;
      const auto names = meta.at("basis").get<std::vector<std::string>>();
      c.basis = CalibrationBasis::polynomial(static_cast<int>(names.size()));
      for (std::size_t i = 0; i < names.size(); ++i) {
        if (c.basis.functions()[i].name != names[i]) throw DataError("model file: unsupported calibration basis");
      }
      c.classes = meta.at("classes").get<Index>();
      c.input_dim = input_dim;
      const auto iters = meta.at("iterations").get<std::size_t>();
      for (std::size_t t = 0; t < iters; ++t) {
        c.xweights.push_back(block("x." + std::to_string(t)));
        c.calweights.push_back(block("cal." + std::to_string(t)));
      }
      mf.model = std::move(c);
    } else if (kind == "stagewise") {
      StagewiseModel s;
      const auto& g = meta.at("generator");
      s.generator.kind = generator_kind_from_string(g.at("kind").get<std::string>());
      s.generator.seed = g.at("seed").get<std::uint64_t>();
      s.generator.block = g.at("block").get<Index>();
      s.generator.passes = g.at("passes").get<int>();
      s.generator.bandwidth = g.at("bandwidth").get<double>();
      s.generator.rerank = g.at("rerank").get<std::string>() == "per-block" ? RerankPolicy::kPerBlock
                                                                            : RerankPolicy::kPerPass;
      s.inner = inner_solver_from_string(meta.at("inner").get<std::string>());
      s.classes = meta.at("classes").get<Index>();
      s.input_dim = input_dim;
      const auto& stages = meta.at("stages");
      for (std::size_t i = 0; i < stages.size(); ++i) {
        s.stages.push_back({detail::block_record_from_json(stages[i]), block("stage." + std::to_string(i))});
      }
      mf.model = std::move(s);
    } else {
      throw DataError("model file: unknown model kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file: malformed metadata: ") + e.what());
  }
  return mf;
}

inline void save_model(const std::string& path, const ModelFile& mf) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_model(out, mf);
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_model(in);
}

}  // namespace glmfit
