#pragma once

// Query complexity estimation and the derived electron budget
// K(q) = floor(K_max * C(q)).

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "orbit/checkpoint.hpp"
#include "orbit/nn.hpp"
#include "orbit/rng.hpp"
#include "orbit/stats.hpp"

namespace orbit {

// --- structural features --------------------------------------------------

inline constexpr std::size_t kStructuralFeatureCount = 8;
inline constexpr const char* kFeatureSchemaVersion = "orbit-features/2";

enum StructuralFeature : std::size_t {
  kNumericLiterals = 0,
  kArithmeticOps,
  kRelationalOps,
  kVariables,
  kTokens,
  kParenDepth,
  kCodeFence,
  kQuestionMarks,
};

struct StructuralFeatures {
  std::array<double, kStructuralFeatureCount> counts{};    // pre-squash
  std::array<double, kStructuralFeatureCount> squashed{};  // x / (x + 10), flag passed through
  bool empty_query = false;
};

inline double squash(double x) { return x / (x + 10.0); }

inline StructuralFeatures extract_structural_features(std::string_view q) {
  StructuralFeatures f;
  bool blank = std::all_of(q.begin(), q.end(), [](unsigned char c) { return std::isspace(c); });
  if (blank) {
    f.empty_query = true;
    return f;
  }
  auto& c = f.counts;
  int depth = 0, max_depth = 0;
  const std::size_t n = q.size();
  for (std::size_t i = 0; i < n;) {
    const unsigned char ch = static_cast<unsigned char>(q[i]);
    if (std::isdigit(ch)) {
      while (i < n && std::isdigit(static_cast<unsigned char>(q[i]))) ++i;
      if (i + 1 < n && q[i] == '.' && std::isdigit(static_cast<unsigned char>(q[i + 1]))) {
        ++i;
        while (i < n && std::isdigit(static_cast<unsigned char>(q[i]))) ++i;
      }
      c[kNumericLiterals] += 1;
      continue;
    }
    if (std::isalpha(ch) || ch == '_') {
      const std::size_t start = i;
      while (i < n && (std::isalnum(static_cast<unsigned char>(q[i])) || q[i] == '_')) ++i;
      const auto word = q.substr(start, i - start);
      if (word.size() == 1 && word != "a" && word != "A" && word != "I") c[kVariables] += 1;
      continue;
    }
    const std::string_view two = q.substr(i, 2);
    if (two == "==" || two == "!=" || two == "<=" || two == ">=" || two == "&&" || two == "||") {
      c[kRelationalOps] += 1;
      i += 2;
      continue;
    }
    switch (ch) {
      case '+': case '-': case '*': case '/': case '^': case '%':
        c[kArithmeticOps] += 1;
        break;
      case '=': case '<': case '>': case '!': case '&': case '|':
        c[kRelationalOps] += 1;
        break;
      case '(': case '[': case '{':
        max_depth = std::max(max_depth, ++depth);
        break;
      case ')': case ']': case '}':
        depth = std::max(0, depth - 1);
        break;
      case '?':
        c[kQuestionMarks] += 1;
        break;
      default:
        break;
    }
    ++i;
  }
  std::istringstream words{std::string(q)};
  std::string w;
  while (words >> w) c[kTokens] += 1;
  c[kParenDepth] = max_depth;
  c[kCodeFence] = q.find("```") != std::string_view::npos ? 1.0 : 0.0;
  for (std::size_t k = 0; k < kStructuralFeatureCount; ++k)
    f.squashed[k] = k == kCodeFence ? c[k] : squash(c[k]);
  return f;
}

// --- dense encoder --------------------------------------------------------

// Pluggable encoder contract: deterministic, fixed dimension, unit-norm
// output for non-empty text.
class QueryEncoder {
 public:
  virtual ~QueryEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> encode(std::string_view text) const = 0;
};

inline std::string collapse_whitespace(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

// Hashed frequencies of character trigrams and whole words.
class HashedNgramEncoder final : public QueryEncoder {
 public:
  explicit HashedNgramEncoder(std::size_t dim = 256, std::uint64_t seed = 17) : dim_(dim), seed_(seed) {}

  std::size_t dim() const override { return dim_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<double> encode(std::string_view text) const override {
    std::vector<double> v(dim_, 0.0);
    const std::string s = collapse_whitespace(text);
    if (s.empty()) return v;
    const std::string padded = " " + s + " ";
    const std::uint64_t basis = splitmix64(seed_);
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i)
      v[fnv1a64(std::string_view(padded).substr(i, 3), basis) % dim_] += 1.0;
    std::istringstream words(s);
    std::string w;
    while (words >> w) v[fnv1a64("w:" + w, basis) % dim_] += 1.0;
    const double norm = std::sqrt(nn::dot(v, v));
    for (double& x : v) x /= norm;
    return v;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// --- PCA ------------------------------------------------------------------

struct PcaProjection {
  std::vector<double> mean;                     // d_e
  std::vector<std::vector<double>> components;  // k rows of d_e
  std::vector<double> scale;                    // per component; empty means 1
  bool rank_deficient = false;

  std::size_t input_dim() const { return mean.size(); }
  std::size_t output_dim() const { return components.size(); }

  std::vector<double> project(std::span<const double> x) const {
    if (x.size() != mean.size()) throw nn::ShapeError("pca: input dimension mismatch");
    std::vector<double> out(components.size(), 0.0);
    for (std::size_t r = 0; r < components.size(); ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < x.size(); ++c) acc += components[r][c] * (x[c] - mean[c]);
      out[r] = scale.empty() ? acc : acc * scale[r];
    }
    return out;
  }
};

struct PcaError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Top-k principal directions of the mean-centred samples. Directions with
// (numerically) zero variance are replaced by zero rows. With whiten set,
// each projected coordinate is scaled to unit variance on the samples.
inline PcaProjection fit_pca(const std::vector<std::vector<double>>& samples, std::size_t k, bool whiten = false) {
  if (samples.empty() || samples.size() < k) throw PcaError("fit_pca: need at least k samples");
  const std::size_t d = samples.front().size();
  if (k > d) throw PcaError("fit_pca: k exceeds the embedding dimension");
  Eigen::MatrixXd x(samples.size(), d);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != d) throw nn::ShapeError("fit_pca: ragged samples");
    for (std::size_t j = 0; j < d; ++j) x(i, j) = samples[i][j];
  }
  Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(samples.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const auto& values = eig.eigenvalues();   // ascending
  const auto& vectors = eig.eigenvectors();

  PcaProjection p;
  p.mean.assign(mu.data(), mu.data() + d);
  const double top = std::max(values(d - 1), 0.0);
  const double tol = std::max(top, 1.0) * 1e-12 * static_cast<double>(d);
  for (std::size_t r = 0; r < k; ++r) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - r);
    std::vector<double> row(d, 0.0);
    double sc = 1.0;
    if (values(col) > tol) {
      if (whiten) sc = 1.0 / std::sqrt(values(col));
      Eigen::VectorXd v = vectors.col(col);
      Eigen::Index arg = 0;
      v.cwiseAbs().maxCoeff(&arg);
      if (v(arg) < 0) v = -v;  // sign convention for reproducibility
      for (std::size_t j = 0; j < d; ++j) row[j] = v(static_cast<Eigen::Index>(j));
    } else {
      p.rank_deficient = true;
    }
    p.components.push_back(std::move(row));
    if (whiten) p.scale.push_back(sc);
  }
  return p;
}

// --- gated regressor ------------------------------------------------------

inline int budget(double complexity, int k_max) {
  const double c = std::clamp(complexity, 0.0, 1.0);
  return std::clamp(static_cast<int>(std::floor(static_cast<double>(k_max) * c)), 0, std::max(k_max, 0));
}

struct QueryFeatures {
  std::vector<double> dense_embedding;
  std::vector<double> projected;
  StructuralFeatures structural;
  std::vector<double> composite;  // [projected | structural]
};

struct PredictorConfig {
  std::size_t encoder_dim = 256;
  std::size_t pca_dim = 32;
  std::size_t domain_dim = 16;
  std::vector<std::size_t> hidden{64, 64};
  std::uint64_t encoder_seed = 17;
  bool whiten = true;
};

struct ComplexityPrediction {
  double complexity = 0.5;
  bool fallback_gate = false;  // domain unknown, all-ones gate used
};

struct TrainingSample {
  std::string query;
  int domain = 0;
  double label = 0.0;
};

struct PredictorFitReport {
  double train_mse = 0.0;
  double heldout_mse = 0.0;
  double heldout_spearman = 0.0;
  bool pca_rank_deficient = false;
};

class ComplexityPredictor {
 public:
  ComplexityPredictor() = default;
  ComplexityPredictor(PredictorConfig cfg, Rng& rng) : cfg_(std::move(cfg)), encoder_(cfg_.encoder_dim, cfg_.encoder_seed) {
    const std::size_t x_dim = composite_dim();
    gate_ = nn::Mlp::make(cfg_.domain_dim, cfg_.hidden, x_dim, nn::OutputActivation::sigmoid, rng);
    regressor_ = nn::Mlp::make(x_dim, cfg_.hidden, 1, nn::OutputActivation::sigmoid, rng);
    init_rng_state_ = rng();
  }

  const PredictorConfig& config() const { return cfg_; }
  const HashedNgramEncoder& encoder() const { return encoder_; }
  std::size_t composite_dim() const { return cfg_.pca_dim + kStructuralFeatureCount; }
  bool has_pca() const { return !pca_.components.empty(); }
  const PcaProjection& pca() const { return pca_; }
  void set_pca(PcaProjection p) { pca_ = std::move(p); }
  nn::Mlp& gate_mlp() { return gate_; }
  nn::Mlp& regressor() { return regressor_; }
  const nn::Mlp& regressor() const { return regressor_; }
  bool has_domain(int d) const { return domains_.count(d) > 0; }

  nn::DenseParams& domain_embedding(int d) {
    auto it = domains_.find(d);
    if (it == domains_.end()) {
      Rng r(split_seed(init_rng_state_, "domain", static_cast<std::uint64_t>(d)));
      nn::DenseParams e(0, cfg_.domain_dim);
      for (double& v : e.bias) v = uniform(r, -1.0, 1.0);
      it = domains_.emplace(d, std::move(e)).first;
    }
    return it->second;
  }

  QueryFeatures features(std::string_view q) const {
    QueryFeatures f;
    f.dense_embedding = encoder_.encode(q);
    f.projected = has_pca() ? pca_.project(f.dense_embedding) : std::vector<double>(cfg_.pca_dim, 0.0);
    f.structural = extract_structural_features(q);
    f.composite = f.projected;
    f.composite.insert(f.composite.end(), f.structural.squashed.begin(), f.structural.squashed.end());
    return f;
  }

  std::vector<double> gate(int domain) const {
    auto it = domains_.find(domain);
    if (it == domains_.end()) return std::vector<double>(composite_dim(), 1.0);
    return gate_.evaluate(it->second.bias);
  }

  // C(q) = MLP_theta(x_q * g_d)
  ComplexityPrediction predict(std::span<const double> x_q, int domain) const {
    if (x_q.size() != composite_dim()) throw nn::ShapeError("predict_complexity: feature dimension mismatch");
    ComplexityPrediction out;
    out.fallback_gate = !has_domain(domain);
    auto g = gate(domain);
    std::vector<double> gated(x_q.begin(), x_q.end());
    for (std::size_t i = 0; i < gated.size(); ++i) gated[i] *= g[i];
    out.complexity = regressor_.evaluate(gated)[0];
    return out;
  }

  ComplexityPrediction predict(std::string_view q, int domain) const { return predict(features(q).composite, domain); }

  // Differentiable path used for training and gradient checks.
  nn::Var predict(nn::Tape& tape, std::span<const double> x_q, int domain) {
    auto& emb = domain_embedding(domain);
    nn::Var e = tape.dense(emb, tape.constant(nn::Vec{}));
    nn::Var g = tape.mlp(gate_, e);
    nn::Var x = tape.constant(nn::Vec(x_q.begin(), x_q.end()));
    return tape.mlp(regressor_, tape.mul(x, g));
  }

  nn::ParamList parameters() {
    nn::ParamList list;
    nn::append(list, gate_);
    nn::append(list, regressor_);
    for (auto& [d, e] : domains_) list.push_back(&e);
    return list;
  }

  // Fits PCA on the training embeddings, then trains gate + regressor by MSE.
  PredictorFitReport fit(const std::vector<TrainingSample>& train, const std::vector<TrainingSample>& heldout,
                         int epochs, double learning_rate, Rng& rng) {
    std::vector<std::vector<double>> emb;
    for (const auto& s : train) emb.push_back(encoder_.encode(s.query));
    pca_ = fit_pca(emb, cfg_.pca_dim, cfg_.whiten);
    std::vector<std::vector<double>> xs;
    for (const auto& s : train) {
      xs.push_back(features(s.query).composite);
      domain_embedding(s.domain);
    }
    nn::Adam opt(learning_rate);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t batch = 16;
    for (int ep = 0; ep < epochs; ++ep) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
      for (std::size_t start = 0; start < order.size(); start += batch) {
        auto params = parameters();
        nn::zero_grad(params);
        const std::size_t end = std::min(order.size(), start + batch);
        for (std::size_t b = start; b < end; ++b) {
          const auto& s = train[order[b]];
          nn::Tape tape;
          nn::Var pred = predict(tape, xs[order[b]], s.domain);
          nn::Var err = tape.sub(pred, tape.constant(s.label));
          nn::Var loss = tape.scale(tape.mul(err, err), 1.0 / static_cast<double>(end - start));
          tape.backward(loss);
        }
        opt.step(params);
      }
    }
    PredictorFitReport rep;
    rep.pca_rank_deficient = pca_.rank_deficient;
    auto mse = [&](const std::vector<TrainingSample>& set, std::vector<double>* preds) {
      double s = 0.0;
      for (const auto& t : set) {
        const double p = predict(t.query, t.domain).complexity;
        if (preds) preds->push_back(p);
        s += (p - t.label) * (p - t.label);
      }
      return set.empty() ? 0.0 : s / static_cast<double>(set.size());
    };
    rep.train_mse = mse(train, nullptr);
    std::vector<double> preds, labels;
    rep.heldout_mse = mse(heldout, &preds);
    for (const auto& t : heldout) labels.push_back(t.label);
    rep.heldout_spearman = heldout.size() >= 2 ? stats::spearman(preds, labels) : 0.0;
    return rep;
  }

  TensorRegistry registry() {
    TensorRegistry reg;
    reg.add("pca.mean", 1, pca_.mean.size(), pca_.mean);
    for (std::size_t r = 0; r < pca_.components.size(); ++r)
      reg.add("pca.component." + std::to_string(r), 1, pca_.components[r].size(), pca_.components[r]);
    if (cfg_.whiten) reg.add("pca.scale", 1, pca_.scale.size(), pca_.scale);
    reg.add("gate", gate_);
    reg.add("regressor", regressor_);
    for (auto& [d, e] : domains_) reg.add("domain." + std::to_string(d), 1, e.bias.size(), e.bias);
    return reg;
  }

  std::pair<std::filesystem::path, std::filesystem::path> save(const std::filesystem::path& prefix, std::uint64_t seed) {
    CheckpointInfo info;
    info.seed = seed;
    info.extra["schema"] = kFeatureSchemaVersion;
    info.extra["encoder_dim"] = cfg_.encoder_dim;
    info.extra["encoder_seed"] = cfg_.encoder_seed;
    info.extra["pca_dim"] = cfg_.pca_dim;
    info.extra["domain_dim"] = cfg_.domain_dim;
    info.extra["hidden"] = cfg_.hidden;
    info.extra["whiten"] = cfg_.whiten;
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& [d, e] : domains_) ids.push_back(d);
    info.extra["domains"] = ids;
    return save_checkpoint(prefix, registry(), info);
  }

  static ComplexityPredictor load(const std::filesystem::path& prefix) {
    std::ifstream js(prefix.string() + ".json");
    if (!js) throw CheckpointError("cannot read predictor manifest " + prefix.string() + ".json");
    nlohmann::json m = nlohmann::json::parse(js, nullptr, false);
    if (m.is_discarded() || !m.contains("extra")) throw CheckpointError("malformed predictor manifest");
    const auto& ex = m.at("extra");
    if (ex.value("schema", "") != kFeatureSchemaVersion)
      throw CheckpointError("predictor feature schema mismatch: " + ex.value("schema", std::string("<none>")));
    PredictorConfig cfg;
    cfg.encoder_dim = ex.at("encoder_dim");
    cfg.encoder_seed = ex.at("encoder_seed");
    cfg.pca_dim = ex.at("pca_dim");
    cfg.domain_dim = ex.at("domain_dim");
    cfg.hidden = ex.at("hidden").get<std::vector<std::size_t>>();
    cfg.whiten = ex.at("whiten");
    Rng rng(0);
    ComplexityPredictor p(cfg, rng);
    p.pca_.mean.assign(cfg.encoder_dim, 0.0);
    p.pca_.components.assign(cfg.pca_dim, std::vector<double>(cfg.encoder_dim, 0.0));
    if (cfg.whiten) p.pca_.scale.assign(cfg.pca_dim, 0.0);
    for (int d : ex.at("domains").get<std::vector<int>>()) p.domain_embedding(d);
    load_checkpoint(prefix, p.registry());
    return p;
  }

 private:
  PredictorConfig cfg_;
  HashedNgramEncoder encoder_;
  PcaProjection pca_;
  nn::Mlp gate_;
  nn::Mlp regressor_;
  std::map<int, nn::DenseParams> domains_;
  std::uint64_t init_rng_state_ = 0;
};

}  // namespace orbit

