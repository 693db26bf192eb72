// glmfit: train / eval / spectrum / bench front end.
//
// Exit codes: 0 success, 1 a bench suite failed, 2 usage / config / data
// error, 3 numerical failure.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "glmfit/data.hpp"
#include "glmfit/diagnostics.hpp"
#include "glmfit/experiments.hpp"
#include "glmfit/model_io.hpp"
#include "glmfit/solvers.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace glmfit;

namespace {

// ---------------------------------------------------------------- hashing

// git's blob id: sha1("blob <size>\0" + content).
class BlobHasher {
 public:
  BlobHasher() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha1(), nullptr); }
  ~BlobHasher() { EVP_MD_CTX_free(ctx_); }
  BlobHasher(const BlobHasher&) = delete;
  BlobHasher& operator=(const BlobHasher&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md, &len);
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) out += {digits[md[i] >> 4], digits[md[i] & 15]};
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::string blob_hash(const std::string& content) {
  BlobHasher h;
  const std::string head = "blob " + std::to_string(content.size());
  h.update(head.data(), head.size() + 1);  // includes the NUL
  h.update(content.data(), content.size());
  return h.hex();
}

std::string file_blob_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  BlobHasher h;
  const std::string head = "blob " + std::to_string(fs::file_size(path));
  h.update(head.data(), head.size() + 1);
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

// ---------------------------------------------------------------- data sources

struct Source {
  Dataset data;
  std::string hash;
};

std::map<std::string, std::string> parse_kv_list(const std::string& s) {
  std::map<std::string, std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InvalidArgument("expected key=value in '" + s + "', got '" + item + "'");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw DataError("cannot open '" + path + "': no such file");
}

// synthetic:n=500,d=10,k=5,link=softmax,norm=1,cond=1e-6,seed=1
Source synthetic_source(const std::string& spec_text) {
  auto kv = parse_kv_list(spec_text);
  SyntheticSpec spec;
  std::uint64_t seed = 1;
  double cond = 1.0;
  for (const auto& [k, v] : kv) {
    try {
      if (k == "n") spec.n = std::stol(v);
      else if (k == "d") spec.d = std::stol(v);
      else if (k == "k") spec.k = std::stol(v);
      else if (k == "link") spec.link = v;
      else if (k == "norm") spec.weight_norm = std::stod(v);
      else if (k == "cond") cond = std::stod(v);
      else if (k == "seed") seed = std::stoull(v);
      else throw InvalidArgument("unknown synthetic key '" + k + "' (n,d,k,link,norm,cond,seed)");
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const InvalidArgument*>(&e) != nullptr) throw;
      throw InvalidArgument("synthetic: bad value for '" + k + "': '" + v + "'");
    }
  }
  if (cond != 1.0) {
    for (Index j = 0; j < spec.d; ++j)
      spec.spectrum.push_back(std::pow(cond, spec.d > 1 ? static_cast<double>(j) / (spec.d - 1) : 0.0));
  }
  // the link only shapes W*; labels are always sampled so targets are one-hot
  spec.noise = NoiseMode::kMultinomialSample;
  const std::string link = spec.link;
  spec.link = "softmax";
  if (link != "softmax") {
    throw InvalidArgument("synthetic data sources sample class labels and need link=softmax");
  }
  const auto s = synthesize(spec, seed);
  Source out;
  out.data.x = s.x;
  out.data.labels = s.labels;
  out.data.y = s.y;
  for (Index c = 0; c < spec.k; ++c) out.data.class_names.push_back(std::to_string(c));
  out.data.provenance = {"synthetic:" + spec_text};
  out.hash = blob_hash("synthetic:" + spec_text);
  return out;
}

std::string mnist_dir() {
  const char* d = std::getenv("GLMFIT_MNIST_DIR");
  return d != nullptr ? d : "/root/data/mnist";
}

/// "mnist[:train|:test]", "idx:IMAGES,LABELS", "synthetic:...", a .glmd file or a libsvm file.
Source load_source(const std::string& spec, const std::vector<std::string>& class_names = {}) {
  if (spec.empty()) throw InvalidArgument("no data source given");
  if (spec.rfind("synthetic:", 0) == 0) return synthetic_source(spec.substr(10));
  std::vector<std::string> files;
  Source out;
  if (spec == "mnist" || spec == "mnist:train" || spec == "mnist:test") {
    const bool test = spec == "mnist:test";
    const fs::path dir = mnist_dir();
    files = {(dir / (test ? "t10k-images-idx3-ubyte" : "train-images-idx3-ubyte")).string(),
             (dir / (test ? "t10k-labels-idx1-ubyte" : "train-labels-idx1-ubyte")).string()};
    for (const auto& f : files) require_file(f);
    out.data = load_idx(files[0], files[1]);
  } else if (spec.rfind("idx:", 0) == 0) {
    const auto comma = spec.find(',');
    if (comma == std::string::npos) throw InvalidArgument("idx source needs 'idx:IMAGES,LABELS'");
    files = {spec.substr(4, comma - 4), spec.substr(comma + 1)};
    for (const auto& f : files) require_file(f);
    out.data = load_idx(files[0], files[1]);
  } else {
    require_file(spec);
    files = {spec};
    if (fs::path(spec).extension() == ".glmd") {
      out.data = load_glmd(spec);
    } else if (!class_names.empty()) {
      LabelMap map{class_names};
      out.data = load_libsvm(spec, 0, &map);
    } else {
      out.data = load_libsvm(spec);
    }
  }
  if (files.size() == 1) {
    out.hash = file_blob_hash(files[0]);
  } else {
    std::string joined;
    for (const auto& f : files) joined += file_blob_hash(f) + " " + fs::path(f).filename().string() + "\n";
    out.hash = blob_hash(joined);
  }
  return out;
}

// ---------------------------------------------------------------- config

struct ExperimentConfig {
  std::string data, test, out = "glmfit-run";
  std::string algo = "gls", link = "softmax";
  Index iters = 100;
  double ridge = 0.0;
  bool ridge_floor = true;
  bool half_lipschitz = false;
  int degree = 3;
  // pipeline
  bool log_tf = false, bias = false;
  Index pca = 0, rff = 0;
  std::string bandwidth = "median", bandwidth_mode = "median-squared";
  // stagewise
  std::string gen = "subset-random", inner = "linear";
  Index block = 512, stages = 10, inner_iters = 50;
  int passes = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool no_timing = false;

  json to_json() const {
    return {{"data", data},         {"test", test},
            {"out", out},           {"algo", algo},
            {"link", link},         {"iters", iters},
            {"ridge", ridge},       {"ridge_floor", ridge_floor},
            {"half_lipschitz", half_lipschitz},
            {"degree", degree},     {"log_tf", log_tf},
            {"bias", bias},         {"pca", pca},
            {"rff", rff},           {"bandwidth", bandwidth},
            {"bandwidth_mode", bandwidth_mode},
            {"gen", gen},           {"inner", inner},
            {"block", block},       {"stages", stages},
            {"inner_iters", inner_iters},
            {"passes", passes},     {"seed", seed},
            {"threads", threads},   {"no_timing", no_timing}};
  }

  PipelineSpec pipeline() const {
    PipelineSpec p;
    p.log_tf = log_tf;
    p.pca_dims = pca;
    p.rff = rff;
    p.bias = bias;
    p.seed = seed;
    if (bandwidth_mode == "median") {
      p.bandwidth_mode = BandwidthMode::kMedian;
    } else if (bandwidth_mode != "median-squared") {
      throw InvalidArgument("bandwidth-mode must be median-squared or median, got '" + bandwidth_mode + "'");
    }
    if (bandwidth != "median") {
      try {
        p.bandwidth = std::stod(bandwidth);
      } catch (const std::exception&) {
        throw InvalidArgument("bandwidth must be 'median' or a positive number, got '" + bandwidth + "'");
      }
      if (!(p.bandwidth > 0)) throw InvalidArgument("bandwidth must be positive");
    }
    return p;
  }
};

void add_pipeline_options(CLI::App* app, ExperimentConfig& c) {
  app->add_flag("--log-tf", c.log_tf, "log(1 + count) on sparse inputs");
  app->add_option("--pca", c.pca, "PCA dimensions (0: off)")->check(CLI::NonNegativeNumber);
  app->add_option("--rff", c.rff, "random Fourier features (0: off)")->check(CLI::NonNegativeNumber);
  app->add_option("--bandwidth", c.bandwidth, "RFF bandwidth s, or 'median'");
  app->add_option("--bandwidth-mode", c.bandwidth_mode, "median-squared | median");
  app->add_flag("--bias", c.bias, "append a constant feature");
  app->add_option("--seed", c.seed, "seed for every random choice");
}

/// Fills options left unset on the command line from a key=value file, so
/// flags win. Parsing is CLI11's config reader.
void apply_config_file(CLI::App* app, const std::string& path) {
  require_file(path);
  std::ifstream in(path);
  std::vector<CLI::ConfigItem> items;
  try {
    // '#' comments; values are never split into arrays (data specs contain commas)
    CLI::ConfigBase reader;
    reader.comment('#')->arrayDelimiter('\x1f');
    items = reader.from_config(in);
  } catch (const CLI::ParseError& e) {
    throw InvalidArgument("config file '" + path + "': " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!item.parents.empty()) throw InvalidArgument("config file '" + path + "': sections are not supported");
    CLI::Option* opt = app->get_option_no_throw("--" + item.name);
    if (opt == nullptr || item.name == "config") {
      throw InvalidArgument("config file '" + path + "': unknown key '" + item.name + "'");
    }
    if (opt->count() > 0) continue;
    try {
      opt->add_result(item.inputs);
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      throw InvalidArgument("config file '" + path + "': bad value for '" + item.name + "': " + e.what());
    }
  }
}

// ---------------------------------------------------------------- output

json record_json(const TraceRecord& r, bool timing) {
  json j = {{"t", r.t}, {"loss", nullptr}, {"mse", r.mse}, {"seconds", timing ? r.seconds : 0.0}};
  if (!std::isnan(r.loss)) j["loss"] = r.loss;
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

template <class XMatrix>
json metrics_json(const AnyModel& model, const XMatrix& x, const Dataset& ds) {
  const Matrix s = model_scores(model, x);
  json conf = confusion_counts(s, ds.labels);
  return {{"n", ds.rows()}, {"error", classification_error(s, ds.labels)}, {"confusion", conf}};
}

// ---------------------------------------------------------------- commands

struct TrainOutput {
  AnyModel model;
  TrainTrace trace;
};

template <class XMatrix>
TrainOutput run_training(const ExperimentConfig& c, const XMatrix& x, const Matrix& y) {
  LabeledBatch<XMatrix> batch(x, y);
  const RidgeFallback fb = c.ridge_floor ? RidgeFallback::kDefaultFloor : RidgeFallback::kNone;
  if (c.algo == "gls" || c.algo == "gd") {
    IterativeOptions o;
    o.iters = c.iters;
    o.ridge = c.ridge;
    o.fallback = fb;
    o.threads = c.threads;
    const LinkSpec link = link_by_name(c.link, c.half_lipschitz);
    auto r = c.algo == "gls" ? generalized_least_squares(batch, link, o) : gradient_descent(batch, link, o);
    return {r.model, r.trace};
  }
  if (c.algo == "calibrated") {
    CalibratedOptions o;
    o.iters = c.iters;
    o.ridge = c.ridge;
    o.fallback = fb;
    o.threads = c.threads;
    auto r = calibrated_least_squares(batch, CalibrationBasis::polynomial(c.degree), o);
    return {r.model, r.trace};
  }
  if (c.algo == "stagewise") {
    GeneratorSpec g;
    g.kind = generator_kind_from_string(c.gen);
    g.seed = c.seed;
    g.block = c.block;
    g.passes = c.passes;
    if (g.kind == GeneratorKind::kRff) {
      g.bandwidth = c.bandwidth == "median" ? median_bandwidth(x, 1000, c.seed,
                                                               c.pipeline().bandwidth_mode)
                                            : c.pipeline().bandwidth;
    }
    StagewiseOptions o;
    o.stages = c.stages;
    o.inner = inner_solver_from_string(c.inner);
    o.inner_iters = c.inner_iters;
    o.ridge = c.ridge;
    o.fallback = fb;
    o.half_lipschitz = c.half_lipschitz;
    o.threads = c.threads;
    auto r = stagewise(batch, FeatureGenerator(g, x.cols()), o);
    return {r.model, r.trace};
  }
  throw InvalidArgument("unknown algorithm '" + c.algo + "' (expected gls|gd|calibrated|stagewise)");
}

int cmd_train(const ExperimentConfig& c) {
  if (c.iters < 1) throw InvalidArgument("--iters must be >= 1");
  const Source train = load_source(c.data);
  const FittedPipeline pipe = fit_pipeline(c.pipeline(), train.data.x);
  const FeatureMatrix xtr = pipe.apply(train.data.x);
  TrainOutput res = std::visit([&](const auto& x) { return run_training(c, x, train.data.y); }, xtr);

  const bool timing = !c.no_timing;
  json trace;
  trace["config"] = c.to_json();
  trace["input_hash"] = {{"train", train.hash}};
  trace["algorithm"] = res.trace.algorithm;
  trace["initial"] = record_json(res.trace.records.front(), timing);
  trace["iterations"] = json::array();
  for (std::size_t i = 1; i < res.trace.records.size(); ++i)
    trace["iterations"].push_back(record_json(res.trace.records[i], timing));

  json fin = std::visit([&](const auto& x) { return metrics_json(res.model, x, train.data); }, xtr);
  fin.erase("confusion");
  fin["ridge_used"] = res.trace.ridge_used;
  fin["ridge_substituted"] = res.trace.ridge_substituted;
  fin["stopped_early"] = res.trace.stopped_early;
  if (res.trace.stopped_early) fin["stop_reason"] = res.trace.stop_reason;
  fin["mse"] = res.trace.records.back().mse;
  if (!std::isnan(res.trace.records.back().loss)) fin["loss"] = res.trace.records.back().loss;
  if (pipe.rff) fin["bandwidth"] = pipe.bandwidth_used;
  if (pipe.pca && !pipe.pca->warning.empty()) fin["pca_warning"] = pipe.pca->warning;
  if (!c.test.empty()) {
    const Source test = load_source(c.test, train.data.class_names);
    if (test.data.cols() != pipe.input_dim) {
      throw InvalidArgument("test data has " + std::to_string(test.data.cols()) + " features, training data has " +
                            std::to_string(pipe.input_dim));
    }
    const FeatureMatrix xte = pipe.apply(test.data.x);
    const json m = std::visit([&](const auto& x) { return metrics_json(res.model, x, test.data); }, xte);
    fin["test_error"] = m["error"];
    fin["test_n"] = m["n"];
    trace["input_hash"]["test"] = test.hash;
  }
  trace["final"] = fin;

  fs::create_directories(c.out);
  ModelFile mf{trace["config"], pipe, res.model, train.data.class_names};
  mf.config["input_hash"] = trace["input_hash"];
  save_model((fs::path(c.out) / "model.glmm").string(), mf);
  write_text(fs::path(c.out) / "trace.json", trace.dump(2) + "\n");
  std::printf("%s: %zu records, train error %.6g%s -> %s\n", res.trace.algorithm.c_str(),
              res.trace.records.size() - 1, fin["error"].get<double>(),
              fin.contains("test_error") ? (", test error " + std::to_string(fin["test_error"].get<double>())).c_str()
                                         : "",
              c.out.c_str());
  if (res.trace.ridge_substituted) {
    std::fprintf(stderr, "note: second moment was singular; ridge floor %.3g substituted\n", res.trace.ridge_used);
  }
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data, const std::string& out) {
  require_file(model_path);
  const ModelFile mf = load_model(model_path);
  const Source src = load_source(data, mf.class_names);
  if (src.data.cols() != mf.pipeline.input_dim) {
    throw InvalidArgument("model expects " + std::to_string(mf.pipeline.input_dim) + " input features, data has " +
                          std::to_string(src.data.cols()));
  }
  if (src.data.classes() != static_cast<Index>(mf.class_names.size())) {
    throw InvalidArgument("model has " + std::to_string(mf.class_names.size()) + " classes, data has " +
                          std::to_string(src.data.classes()));
  }
  const FeatureMatrix x = mf.pipeline.apply(src.data.x);
  json m = std::visit([&](const auto& xx) { return metrics_json(mf.model, xx, src.data); }, x);
  m["algorithm"] = algorithm_of(mf.model);
  m["classes"] = mf.class_names;
  m["input_hash"] = src.hash;
  m["config"] = mf.config;
  const std::string text = m.dump(2) + "\n";
  if (!out.empty()) write_text(out, text);
  std::cout << text;
  return 0;
}

int cmd_spectrum(const ExperimentConfig& c, Index r, Index row_cap) {
  const Source src = load_source(c.data);
  const FittedPipeline pipe = fit_pipeline(c.pipeline(), src.data.x);
  const FeatureMatrix x = pipe.apply(src.data.x);
  const SpectrumReport rep = std::visit([&](const auto& m) { return top_singular_values(m, r, c.seed, row_cap); }, x);
  json j = {{"singular_values", rep.singular_values},
            {"condition_proxy", rep.condition_proxy ? json(*rep.condition_proxy) : json(nullptr)},
            {"rows_used", rep.rows_used},
            {"subsampled", rep.subsampled},
            {"input_hash", src.hash},
            {"config", c.to_json()}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_bench(const std::vector<std::string>& names, SuiteEnv env, const std::string& json_out) {
  std::vector<SuiteEntry> todo;
  if (names.empty() || (names.size() == 1 && names[0] == "all")) {
    todo = suites();
  } else {
    for (const auto& n : names) todo.push_back(find_suite(n));
  }
  json all = json::array();
  int failed = 0;
  std::printf("%-4s %-20s %9s  %s\n", "", "suite", "seconds", "checks");
  for (const auto& s : todo) {
    const SuiteReport r = s.run(env);
    std::size_t ok = 0;
    for (const auto& c : r.checks) ok += c.pass ? 1 : 0;
    std::printf("%-4s %-20s %9.2f  %zu/%zu\n", to_string(r.status).c_str(), r.suite.c_str(), r.seconds, ok,
                r.checks.size());
    for (const auto& c : r.checks)
      std::printf("       %s %s%s%s\n", c.pass ? "ok  " : (c.soft ? "soft" : "FAIL"), c.name.c_str(),
                  c.detail.empty() ? "" : ": ", c.detail.c_str());
    for (const auto& n : r.notes) std::printf("       note: %s\n", n.c_str());
    std::fflush(stdout);
    if (r.status == SuiteStatus::kFail) ++failed;
    all.push_back(to_json(r));
  }
  if (!json_out.empty()) write_text(json_out, all.dump(2) + "\n");
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"glmfit: generalized linear models by preconditioned least squares"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "glmfit 0.1.0");

  ExperimentConfig cfg;

  auto* train = app.add_subcommand("train", "fit a model; writes <out>/model.glmm and <out>/trace.json");
  std::string config_path;
  train->add_option("--config", config_path, "key=value file (keys are long flag names); flags take precedence");
  train->add_option("--data", cfg.data, "training data: mnist[:train|:test] | idx:IMG,LBL | synthetic:k=v,... | FILE");
  train->add_option("--test", cfg.test, "optional held-out data, same forms as --data");
  train->add_option("--out", cfg.out, "output directory");
  train->add_option("--algo", cfg.algo, "gls | gd | calibrated | stagewise");
  train->add_option("--link", cfg.link, "softmax (logistic) | identity (linear)");
  train->add_option("--iters", cfg.iters, "iterations T");
  train->add_option("--ridge", cfg.ridge, "ridge lambda")->check(CLI::NonNegativeNumber);
  train->add_flag("!--no-ridge-floor", cfg.ridge_floor, "fail instead of adding a ridge floor to a singular moment");
  train->add_flag("--half-lipschitz", cfg.half_lipschitz, "use L = 1/2 for softmax");
  train->add_option("--degree", cfg.degree, "calibration basis {y, ..., y^degree}")->check(CLI::PositiveNumber);
  train->add_option("--gen", cfg.gen, "identity | subset-sequential | subset-random | subset-gradient | rff");
  train->add_option("--block", cfg.block, "features per stage")->check(CLI::PositiveNumber);
  train->add_option("--stages", cfg.stages, "stagewise stages")->check(CLI::PositiveNumber);
  train->add_option("--passes", cfg.passes, "sweeps over the columns for subset generators")->check(CLI::PositiveNumber);
  train->add_option("--inner", cfg.inner, "linear | logistic | calibrated-linear");
  train->add_option("--inner-iters", cfg.inner_iters, "iterations of the logistic inner fit")->check(CLI::PositiveNumber);
  train->add_option("--threads", cfg.threads, "worker threads for second-moment accumulation")
      ->check(CLI::PositiveNumber);
  train->add_flag("--no-timing", cfg.no_timing, "write zero timings so traces are byte-identical across runs");
  add_pipeline_options(train, cfg);

  std::string model_path, eval_data, eval_out;
  auto* eval = app.add_subcommand("eval", "classification error and confusion counts of a saved model");
  eval->add_option("--model", model_path, "model file")->required();
  eval->add_option("--data", eval_data, "data to score")->required();
  eval->add_option("--out", eval_out, "also write the metrics JSON here");

  Index r = 1000, row_cap = 10000;
  ExperimentConfig spec_cfg;
  auto* spectrum = app.add_subcommand("spectrum", "top-r singular values and sigma_2 / sigma_r");
  spectrum->add_option("--data", spec_cfg.data, "data source")->required();
  spectrum->add_option("-r,--rank", r, "number of singular values")->check(CLI::PositiveNumber);
  spectrum->add_option("--row-cap", row_cap, "rows sampled when the data is larger")->check(CLI::PositiveNumber);
  add_pipeline_options(spectrum, spec_cfg);

  std::vector<std::string> suite_names;
  std::string bench_json;
  SuiteEnv env = suite_env_from_environment();
  auto* bench = app.add_subcommand("bench", "run benchmark suites (or 'all')");
  bench->add_option("suites", suite_names, "suite names");
  bench->add_option("--json", bench_json, "write the full report here");
  bench->add_option("--mnist-dir", env.mnist_dir, "directory with the four MNIST IDX files");
  bench->add_option("--news20", env.news20_path, "NEWS20 libsvm file for the spectrum suite");
  bench->add_flag("--quick", env.quick, "shorter MNIST runs (not the reference settings)");
  bench->add_option("--threads", env.threads, "worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      if (!config_path.empty()) apply_config_file(train, config_path);
      if (cfg.data.empty()) throw InvalidArgument("--data is required (on the command line or in the config file)");
      return cmd_train(cfg);
    }
    if (*eval) return cmd_eval(model_path, eval_data, eval_out);
    if (*spectrum) return cmd_spectrum(spec_cfg, r, row_cap);
    if (*bench) return cmd_bench(suite_names, env, bench_json);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "glmfit: numerical failure: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "glmfit: %s\n", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "glmfit: malformed metadata: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "glmfit: unexpected error: %s\n", e.what());
    return 2;
  }
  return 2;
}
