#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "scenediff/instruction.hpp"
#include "scenediff/layout_diffusion.hpp"
#include "scenediff/scene_model.hpp"

namespace scenediff {

enum class KernelKind { kIndependentMask = 0, kUniform, kJointMask, kGaussianEmbedding };

inline const char* kernel_name(KernelKind k) {
  switch (k) {
    case KernelKind::kIndependentMask: return "independent-mask";
    case KernelKind::kUniform: return "uniform";
    case KernelKind::kJointMask: return "joint-mask";
    case KernelKind::kGaussianEmbedding: return "gaussian-embedding";
  }
  return "?";
}

inline KernelKind kernel_from_name(const std::string& name) {
  for (KernelKind k : {KernelKind::kIndependentMask, KernelKind::kUniform, KernelKind::kJointMask,
                       KernelKind::kGaussianEmbedding})
    if (name == kernel_name(k)) return k;
  throw InvalidArgument("unknown kernel kind '" + name + "'");
}

inline bool is_mask_kernel(KernelKind k) { return k == KernelKind::kIndependentMask || k == KernelKind::kJointMask; }

struct ScheduleOptions {
  double leak = 0.01;         // total per-step probability of moving between real values
  bool freeze_empty = false;  // keep the empty state out of forward corruption
};

/// Per-step transition matrices for one categorical variable with K real
/// values plus empty (index K) and mask (index K + 1).
/// Convention: step(t)(m, n) = q(x_t = m | x_{t-1} = n), so columns sum to one
/// and cumulative(t) = step(t) * ... * step(1).
class MaskSchedule {
 public:
  MaskSchedule() = default;

  int steps() const noexcept { return steps_; }
  int real_states() const noexcept { return real_; }
  int states() const noexcept { return real_ + 2; }
  int empty_state() const noexcept { return real_; }
  int mask_state() const noexcept { return real_ + 1; }
  KernelKind kernel() const noexcept { return kernel_; }
  const ScheduleOptions& options() const noexcept { return opts_; }

  double alpha(int t) const { return alpha_.at(t - 1); }
  double beta(int t) const { return beta_.at(t - 1); }
  double gamma(int t) const { return gamma_.at(t - 1); }

  const Eigen::MatrixXd& step(int t) const {
    require(t >= 1 && t <= steps_, "MaskSchedule: step index out of range");
    return step_[t - 1];
  }
  const Eigen::MatrixXd& cumulative(int t) const {
    require(t >= 0 && t <= steps_, "MaskSchedule: cumulative index out of range");
    return cumulative_[t];
  }
  const GaussianSchedule& gaussian() const noexcept { return gaussian_; }

  friend MaskSchedule build_schedule(int T, int K, KernelKind kernel, ScheduleOptions opts);

 private:
  int steps_ = 0;
  int real_ = 0;
  KernelKind kernel_ = KernelKind::kIndependentMask;
  ScheduleOptions opts_{};
  std::vector<double> alpha_, beta_, gamma_;
  std::vector<Eigen::MatrixXd> step_;
  std::vector<Eigen::MatrixXd> cumulative_;
  GaussianSchedule gaussian_;
};

/// Builds the transition schedule of one variable.
///
/// Mask kernels: gamma_t = 1 / (T - t + 1), beta_t = leak / K for t < T and 0
/// at t = T, alpha_t = 1 - gamma_t - K beta_t. Real values leak only among
/// themselves; empty is masked like any value but never leaks.
/// Uniform kernel: no mask; the block of real values (plus empty unless
/// frozen) is resampled uniformly with probability 1 / (T - t + 1), so the
/// terminal marginal is exactly uniform.
/// Gaussian-embedding kernel: identity matrices plus a cosine Gaussian
/// schedule over one-hot embeddings.
inline MaskSchedule build_schedule(int T, int K, KernelKind kernel, ScheduleOptions opts = {}) {
  require(T >= 1, "build_schedule: T must be >= 1");
  require(K >= 1, "build_schedule: K must be >= 1");
  require(opts.leak >= 0.0 && std::isfinite(opts.leak), "build_schedule: leak must be >= 0");
  MaskSchedule s;
  s.steps_ = T;
  s.real_ = K;
  s.kernel_ = kernel;
  s.opts_ = opts;
  const int S = K + 2, empty = K, mask = K + 1;

  for (int t = 1; t <= T; ++t) {
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(S, S);
    double alpha = 1.0, beta = 0.0, gamma = 0.0;
    switch (kernel) {
      case KernelKind::kIndependentMask:
      case KernelKind::kJointMask: {
        gamma = 1.0 / static_cast<double>(T - t + 1);
        beta = t == T ? 0.0 : opts.leak / K;
        alpha = 1.0 - gamma - K * beta;
        if (alpha < 0.0) {
          require(alpha > -1e-12, "build_schedule: leak too large, alpha_t < 0 at t = " + std::to_string(t));
          alpha = 0.0;
        }
        for (int n = 0; n < K; ++n) {
          for (int m = 0; m < K; ++m) Q(m, n) = beta;
          Q(n, n) += alpha;
          Q(mask, n) = gamma;
        }
        if (opts.freeze_empty) {
          Q(empty, empty) = 1.0;
        } else {
          Q(empty, empty) = 1.0 - gamma;
          Q(mask, empty) = gamma;
        }
        break;
      }
      case KernelKind::kUniform: {
        const int block = opts.freeze_empty ? K : K + 1;
        const double resample = 1.0 / static_cast<double>(T - t + 1);
        alpha = 1.0 - resample;
        beta = resample / block;
        for (int n = 0; n < block; ++n) {
          for (int m = 0; m < block; ++m) Q(m, n) = beta;
          Q(n, n) += alpha;
        }
        if (opts.freeze_empty) Q(empty, empty) = 1.0;
        break;
      }
      case KernelKind::kGaussianEmbedding:
        Q = Eigen::MatrixXd::Identity(S, S);
        break;
    }
    Q(mask, mask) = 1.0;
    s.alpha_.push_back(alpha);
    s.beta_.push_back(beta);
    s.gamma_.push_back(gamma);
    s.step_.push_back(std::move(Q));
  }
  s.cumulative_.push_back(Eigen::MatrixXd::Identity(S, S));
  for (int t = 1; t <= T; ++t) s.cumulative_.push_back(s.step_[t - 1] * s.cumulative_[t - 1]);
  if (kernel == KernelKind::kGaussianEmbedding) s.gaussian_ = build_gaussian_schedule(T);
  return s;
}

/// The three per-kind schedules of a semantic graph.
struct GraphSchedule {
  GraphVocab vocab;
  KernelKind kernel = KernelKind::kIndependentMask;
  MaskSchedule category, code, relation;

  const MaskSchedule& of(VarKind k) const {
    switch (k) {
      case VarKind::kCategory: return category;
      case VarKind::kCode: return code;
      case VarKind::kRelation: return relation;
    }
    return category;
  }
  int steps() const { return category.steps(); }
};

inline GraphSchedule build_graph_schedule(int T, const GraphVocab& vocab, KernelKind kernel, ScheduleOptions opts = {}) {
  return {vocab, kernel, build_schedule(T, vocab.real_states(VarKind::kCategory), kernel, opts),
          build_schedule(T, vocab.real_states(VarKind::kCode), kernel, opts),
          build_schedule(T, vocab.real_states(VarKind::kRelation), kernel, opts)};
}

// ---------------------------------------------------------------------------
// Scalar forward process and posteriors

inline int forward_sample(int x0, int t, const MaskSchedule& sched, Rng& rng) {
  require(t >= 0 && t <= sched.steps(), "forward_sample: t out of range");
  require(x0 >= 0 && x0 < sched.states(), "forward_sample: state out of range");
  if (t == 0) return x0;
  const Eigen::MatrixXd& Qb = sched.cumulative(t);
  std::vector<double> col(Qb.rows());
  for (Eigen::Index m = 0; m < Qb.rows(); ++m) col[m] = Qb(m, x0);
  return static_cast<int>(rng.categorical(col));
}

/// q(x_{t-1} | x_t, x_0) over all K + 2 states.
inline std::vector<double> true_posterior(int xt, int x0, int t, const MaskSchedule& sched) {
  require(t >= 1 && t <= sched.steps(), "true_posterior: t out of range");
  require(xt >= 0 && xt < sched.states() && x0 >= 0 && x0 < sched.states(), "true_posterior: state out of range");
  const Eigen::MatrixXd& Q = sched.step(t);
  const Eigen::MatrixXd& Qprev = sched.cumulative(t - 1);
  std::vector<double> out(sched.states());
  double total = 0.0;
  for (int j = 0; j < sched.states(); ++j) {
    out[j] = Q(xt, j) * Qprev(j, x0);
    total += out[j];
  }
  if (!(total > 0.0)) throw InvalidArgument("true_posterior: x_t is unreachable from x_0 at this step");
  for (double& v : out) v /= total;
  return out;
}

namespace detail {

/// Writes sum_x0 p(x0) q(x_{t-1} | x_t, x0) into `out`, skipping clean
/// values that cannot produce x_t. Returns false if none can.
inline bool model_posterior_into(int xt, std::span<const double> p_x0, int t, const MaskSchedule& sched,
                                 std::span<double> out) {
  const Eigen::MatrixXd& Q = sched.step(t);
  const Eigen::MatrixXd& Qprev = sched.cumulative(t - 1);
  const Eigen::MatrixXd& Qbar = sched.cumulative(t);
  const int S = sched.states();
  std::fill(out.begin(), out.end(), 0.0);
  double possible = 0.0;
  for (int x0 = 0; x0 < S; ++x0) {
    if (p_x0[x0] <= 0.0) continue;
    const double marginal = Qbar(xt, x0);
    if (!(marginal > 0.0)) continue;
    const double w = p_x0[x0] / marginal;
    possible += p_x0[x0];
    for (int j = 0; j < S; ++j) {
      const double step = Q(xt, j);
      if (step != 0.0) out[j] += w * step * Qprev(j, x0);
    }
  }
  if (!(possible > 0.0)) return false;
  double total = 0.0;
  for (double v : out) total += v;
  for (double& v : out) v /= total;
  return true;
}

}  // namespace detail

/// p(x_{t-1} | x_t) = sum over predicted clean values of the true posterior,
/// renormalized over the clean values that can produce x_t.
inline std::vector<double> model_posterior(int xt, std::span<const double> p_x0, int t, const MaskSchedule& sched) {
  require(t >= 1 && t <= sched.steps(), "model_posterior: t out of range");
  require(static_cast<int>(p_x0.size()) == sched.states(), "model_posterior: distribution has wrong size");
  require(p_x0[sched.mask_state()] == 0.0, "model_posterior: clean prediction puts mass on mask");
  std::vector<double> out(sched.states());
  if (!detail::model_posterior_into(xt, p_x0, t, sched, out))
    throw InvalidArgument("model_posterior: no predicted clean value can produce x_t");
  return out;
}

/// Classifier-free guidance in probability space: (1 + s) p_cond - s p_uncond,
/// clamped at zero and renormalized. s = 0 and p_cond = p_uncond return
/// p_cond unchanged.
inline std::vector<double> apply_cfg(std::span<const double> p_cond, std::span<const double> p_uncond, double s) {
  require(p_cond.size() == p_uncond.size(), "apply_cfg: size mismatch");
  require(std::isfinite(s), "apply_cfg: scale must be finite");
  std::vector<double> out(p_cond.begin(), p_cond.end());
  if (s == 0.0) return out;
  bool clamped = false;
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = p_cond[i] + s * (p_cond[i] - p_uncond[i]);
    if (out[i] < 0.0) {
      out[i] = 0.0;
      clamped = true;
    }
    total += out[i];
  }
  if (!(total > 0.0)) throw InvalidArgument("apply_cfg: guided distribution is all zero after clamping");
  // an unclamped result already sums to one up to rounding
  if (clamped || std::abs(total - 1.0) > 1e-12)
    for (double& v : out) v /= total;
  return out;
}

/// Mean and per-coordinate variance of the Gaussian q(x_{t-1} | x_t, x_0) for
/// the one-hot embedding kernel.
struct GaussianPosterior {
  std::vector<double> mean;
  double variance = 0.0;
};

inline GaussianPosterior gaussian_true_posterior(std::span<const double> xt, int x0, int t, const MaskSchedule& sched) {
  require(sched.kernel() == KernelKind::kGaussianEmbedding, "gaussian_true_posterior: not an embedding schedule");
  require(t >= 1 && t <= sched.steps(), "gaussian_true_posterior: t out of range");
  require(static_cast<int>(xt.size()) == sched.real_states() + 1, "gaussian_true_posterior: wrong embedding size");
  require(x0 >= 0 && x0 <= sched.real_states(), "gaussian_true_posterior: state out of range");
  const auto& g = sched.gaussian();
  const auto [c0, ct] = g.posterior_mean_coefficients(t);
  GaussianPosterior out{std::vector<double>(xt.size()), g.posterior_variance(t)};
  for (std::size_t i = 0; i < xt.size(); ++i) out.mean[i] = c0 * (static_cast<int>(i) == x0 ? 1.0 : 0.0) + ct * xt[i];
  return out;
}

// ---------------------------------------------------------------------------
// Graph-level predictions and denoisers

/// Per-entry categorical distributions over clean values (mask has zero mass).
class CleanPrediction {
 public:
  CleanPrediction() = default;
  explicit CleanPrediction(const SemanticGraph& shape) {
    offset_.reserve(shape.entry_count() + 1);
    std::size_t off = 0;
    for (std::size_t e = 0; e < shape.entry_count(); ++e) {
      offset_.push_back(off);
      off += shape.vocab().states(shape.kind(e));
    }
    offset_.push_back(off);
    data_.assign(off, 0.0);
  }
  std::size_t size() const noexcept { return offset_.empty() ? 0 : offset_.size() - 1; }
  std::span<double> at(std::size_t e) { return {data_.data() + offset_[e], offset_[e + 1] - offset_[e]}; }
  std::span<const double> at(std::size_t e) const { return {data_.data() + offset_[e], offset_[e + 1] - offset_[e]}; }

 private:
  std::vector<double> data_;
  std::vector<std::size_t> offset_;
};

/// Continuous state of the one-hot embedding kernel: each entry is a vector
/// over its K real values plus empty.
class EmbeddedGraph {
 public:
  EmbeddedGraph() = default;
  explicit EmbeddedGraph(const SemanticGraph& shape) : shape_(shape) {
    std::size_t off = 0;
    for (std::size_t e = 0; e < shape.entry_count(); ++e) {
      offset_.push_back(off);
      off += shape.vocab().states(shape.kind(e)) - 1;
    }
    offset_.push_back(off);
    data_.assign(off, 0.0);
  }
  const SemanticGraph& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return offset_.size() - 1; }
  std::span<double> at(std::size_t e) { return {data_.data() + offset_[e], offset_[e + 1] - offset_[e]}; }
  std::span<const double> at(std::size_t e) const { return {data_.data() + offset_[e], offset_[e + 1] - offset_[e]}; }

 private:
  SemanticGraph shape_;
  std::vector<double> data_;
  std::vector<std::size_t> offset_;
};

/// Predicts the clean graph distribution p(G_0 | G_t, y), factorized per entry.
class GraphDenoiser {
 public:
  virtual ~GraphDenoiser() = default;
  virtual CleanPrediction predict(const SemanticGraph& state, const Instruction* instr, int t) const = 0;

  /// Prediction when entries sit at different noise levels (0 = known clean
  /// value). The default uses the largest level for every entry.
  virtual CleanPrediction predict_levels(const SemanticGraph& state, const Instruction* instr,
                                         std::span<const int> levels) const {
    require(!levels.empty(), "predict_levels: no levels");
    return predict(state, instr, *std::max_element(levels.begin(), levels.end()));
  }
  virtual CleanPrediction predict_embedded(const EmbeddedGraph&, const Instruction*, int) const {
    throw InvalidArgument("this denoiser does not support the gaussian-embedding kernel");
  }
};

inline bool is_conditional(const Instruction* instr) { return instr != nullptr && !instr->unconditional(); }

/// Known clean entries held fixed during reverse sampling.
struct FrozenEntries {
  SemanticGraph values;
  std::vector<bool> frozen;  // per flat entry
};

/// Exact Bayes denoiser under the empirical distribution of a finite set of
/// clean padded graphs. Conditioning keeps only graphs that satisfy the
/// instruction; the evidence of G_t is the product of cumulative transition
/// probabilities over entries.
class EmpiricalDenoiser : public GraphDenoiser {
 public:
  EmpiricalDenoiser(std::span<const SemanticGraph> dataset, GraphSchedule schedule) : schedule_(std::move(schedule)) {
    require(!dataset.empty(), "EmpiricalDenoiser: empty dataset");
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& g : dataset) {
      require(g.nodes() == dataset.front().nodes(), "EmpiricalDenoiser: graphs must share one padded size");
      require(g.vocab() == schedule_.vocab, "EmpiricalDenoiser: graph vocabulary does not match the schedule");
      validate_clean_graph(g);
      auto [it, inserted] = index.emplace(g.key(), support_.size());
      if (inserted) {
        support_.push_back(g);
        counts_.push_back(0.0);
      }
      counts_[it->second] += 1.0;
    }
    for (VarKind k : kVarKinds) {
      const auto& s = schedule_.of(k);
      auto& tables = log_cumulative_[static_cast<int>(k)];
      tables.resize(s.steps() + 1);
      for (int t = 0; t <= s.steps(); ++t) {
        const auto& Qb = s.cumulative(t);
        tables[t].resize(static_cast<std::size_t>(s.states()) * s.states());
        for (int m = 0; m < s.states(); ++m)
          for (int n = 0; n < s.states(); ++n) tables[t][m * s.states() + n] = Qb(m, n) > 0.0 ? std::log(Qb(m, n)) : kNegInf;
      }
    }
  }

  const std::vector<SemanticGraph>& support() const noexcept { return support_; }
  const std::vector<double>& counts() const noexcept { return counts_; }
  const GraphSchedule& schedule() const noexcept { return schedule_; }
  int nodes() const noexcept { return support_.front().nodes(); }

  /// Normalized posterior weights over `support()` given a discrete state.
  std::vector<double> posterior_weights(const SemanticGraph& state, const Instruction* instr, int t) const {
    require(t >= 0 && t <= schedule_.steps(), "EmpiricalDenoiser: t out of range");
    return posterior_weights(state, instr, std::vector<int>(state.entry_count(), t));
  }

  /// Same with a noise level per entry.
  std::vector<double> posterior_weights(const SemanticGraph& state, const Instruction* instr,
                                        std::span<const int> levels) const {
    require(state.nodes() == nodes() && state.vocab() == schedule_.vocab, "EmpiricalDenoiser: state shape mismatch");
    require(levels.size() == state.entry_count(), "EmpiricalDenoiser: one level per entry required");
    for (int l : levels) require(l >= 0 && l <= schedule_.steps(), "EmpiricalDenoiser: level out of range");
    std::vector<double> logw = prior_log_weights(instr);
    const bool skip_mask = is_mask_kernel(schedule_.kernel);
    const auto vals = state.values();
    for (std::size_t i = 0; i < support_.size(); ++i) {
      if (logw[i] == kNegInf) continue;
      const auto clean = support_[i].values();
      double lw = logw[i];
      for (std::size_t e = 0; e < vals.size() && lw != kNegInf; ++e) {
        const VarKind kind = state.kind(e);
        const int S = schedule_.vocab.states(kind);
        if (skip_mask && vals[e] == S - 1) continue;  // mask evidence is the same for every clean value
        lw += log_cumulative_[static_cast<int>(kind)][levels[e]][vals[e] * S + clean[e]];
      }
      logw[i] = lw;
    }
    return normalize(logw, "graph-prior evidence", "no dataset graph is consistent with the current graph state");
  }

  /// Posterior weights given a continuous one-hot embedding state.
  std::vector<double> posterior_weights_embedded(const EmbeddedGraph& state, const Instruction* instr, int t) const {
    require(schedule_.kernel == KernelKind::kGaussianEmbedding, "EmpiricalDenoiser: schedule is not an embedding kernel");
    require(t >= 1 && t <= schedule_.steps(), "EmpiricalDenoiser: t out of range");
    const auto& g = schedule_.category.gaussian();
    const double scale = std::sqrt(g.alpha_bar(t)) / (1.0 - g.alpha_bar(t));
    std::vector<double> logw = prior_log_weights(instr);
    for (std::size_t i = 0; i < support_.size(); ++i) {
      if (logw[i] == kNegInf) continue;
      const auto clean = support_[i].values();
      for (std::size_t e = 0; e < state.size(); ++e) logw[i] += scale * state.at(e)[clean[e]];
    }
    return normalize(logw, "graph-prior evidence", "no dataset graph is consistent with the current graph state");
  }

  /// Dataset mass of graphs that satisfy the instruction and agree exactly
  /// with every frozen entry.
  double evidence(const FrozenEntries& frozen, const Instruction* instr) const;

  CleanPrediction predict(const SemanticGraph& state, const Instruction* instr, int t) const override {
    return marginals(state, posterior_weights(state, instr, t));
  }

  CleanPrediction predict_levels(const SemanticGraph& state, const Instruction* instr,
                                 std::span<const int> levels) const override {
    return marginals(state, posterior_weights(state, instr, levels));
  }

  CleanPrediction predict_embedded(const EmbeddedGraph& state, const Instruction* instr, int t) const override {
    return marginals(state.shape(), posterior_weights_embedded(state, instr, t));
  }

 private:
  std::vector<double> prior_log_weights(const Instruction* instr) const {
    std::vector<double> logw(support_.size());
    bool any = false;
    for (std::size_t i = 0; i < support_.size(); ++i) {
      const bool keep = !is_conditional(instr) || instruction_matches(support_[i], *instr);
      logw[i] = keep ? std::log(counts_[i]) : kNegInf;
      any = any || keep;
    }
    if (!any) throw Unsatisfiable("graph-prior instruction filter", "no dataset graph satisfies the instruction");
    return logw;
  }

  static std::vector<double> normalize(std::vector<double> logw, const char* stage, const char* message) {
    const double lse = log_sum_exp(logw);
    if (lse == kNegInf) throw Unsatisfiable(stage, message);
    for (double& v : logw) v = std::exp(v - lse);
    return logw;
  }

  CleanPrediction marginals(const SemanticGraph& shape, const std::vector<double>& w) const {
    CleanPrediction out(shape);
    for (std::size_t i = 0; i < support_.size(); ++i) {
      if (w[i] == 0.0) continue;
      const auto clean = support_[i].values();
      for (std::size_t e = 0; e < clean.size(); ++e) out.at(e)[clean[e]] += w[i];
    }
    return out;
  }

  GraphSchedule schedule_;
  std::vector<SemanticGraph> support_;
  std::vector<double> counts_;
  std::array<std::vector<std::vector<double>>, 3> log_cumulative_;
};

inline double EmpiricalDenoiser::evidence(const FrozenEntries& frozen, const Instruction* instr) const {
  require(frozen.values.nodes() == nodes() && frozen.frozen.size() == frozen.values.entry_count(),
          "EmpiricalDenoiser::evidence: frozen entries do not match the graph shape");
  double mass = 0.0;
  for (std::size_t i = 0; i < support_.size(); ++i) {
    if (is_conditional(instr) && !instruction_matches(support_[i], *instr)) continue;
    bool agree = true;
    for (std::size_t e = 0; e < frozen.frozen.size() && agree; ++e)
      agree = !frozen.frozen[e] || support_[i].value(e) == frozen.values.value(e);
    if (agree) mass += counts_[i];
  }
  return mass;
}

// ---------------------------------------------------------------------------
// Graph-level forward corruption

namespace detail {

/// Entry groups sharing one mask event under the joint kernel: node j owns
/// its category, its codes and the relations (j, k) with k > j.
inline std::vector<std::vector<std::size_t>> node_groups(const SemanticGraph& g) {
  std::vector<std::vector<std::size_t>> groups(g.nodes());
  for (std::size_t e = 0; e < g.entry_count(); ++e) groups[g.owner_node(e)].push_back(e);
  return groups;
}

inline int sample_column(const Eigen::MatrixXd& M, int col, Rng& rng, int exclude = -1) {
  std::vector<double> w(M.rows());
  for (Eigen::Index m = 0; m < M.rows(); ++m) w[m] = (m == exclude) ? 0.0 : M(m, col);
  return static_cast<int>(rng.categorical(w));
}

}  // namespace detail

/// Samples G_t ~ q(G_t | G_0) for the discrete kernels.
inline SemanticGraph forward_sample_graph(const SemanticGraph& clean, int t, const GraphSchedule& sched, Rng& rng) {
  require(sched.kernel != KernelKind::kGaussianEmbedding, "forward_sample_graph: use forward_sample_embedded");
  require(t >= 0 && t <= sched.steps(), "forward_sample_graph: t out of range");
  SemanticGraph out = clean;
  if (t == 0) return out;
  if (sched.kernel != KernelKind::kJointMask) {
    for (std::size_t e = 0; e < clean.entry_count(); ++e)
      out.set_value(e, forward_sample(clean.value(e), t, sched.of(clean.kind(e)), rng));
    return out;
  }
  for (const auto& group : detail::node_groups(clean)) {
    if (group.empty()) continue;
    const auto& s0 = sched.of(clean.kind(group.front()));
    const double masked = s0.cumulative(t)(s0.mask_state(), clean.value(group.front()));
    const bool mask_node = rng.uniform() < masked;
    for (std::size_t e : group) {
      const auto& s = sched.of(clean.kind(e));
      out.set_value(e, mask_node ? s.mask_state()
                                 : detail::sample_column(s.cumulative(t), clean.value(e), rng, s.mask_state()));
    }
  }
  return out;
}

inline EmbeddedGraph embed_graph(const SemanticGraph& clean) {
  EmbeddedGraph out(clean);
  for (std::size_t e = 0; e < clean.entry_count(); ++e) {
    auto v = out.at(e);
    require(clean.value(e) < static_cast<int>(v.size()), "embed_graph: mask states cannot be embedded");
    v[clean.value(e)] = 1.0;
  }
  return out;
}

/// x_t = sqrt(abar_t) onehot(x_0) + sqrt(1 - abar_t) eps for every entry.
inline EmbeddedGraph forward_sample_embedded(const SemanticGraph& clean, int t, const GraphSchedule& sched, Rng& rng) {
  require(sched.kernel == KernelKind::kGaussianEmbedding, "forward_sample_embedded: not an embedding schedule");
  require(t >= 0 && t <= sched.steps(), "forward_sample_embedded: t out of range");
  EmbeddedGraph out = embed_graph(clean);
  if (t == 0) return out;
  const double ab = sched.category.gaussian().alpha_bar(t);
  for (std::size_t e = 0; e < out.size(); ++e)
    for (double& v : out.at(e)) v = std::sqrt(ab) * v + std::sqrt(1.0 - ab) * rng.normal();
  return out;
}

// ---------------------------------------------------------------------------
// Reverse sampling

struct GuidanceConfig {
  double scale = 0.0;
  double uncond_dropout = 0.20;

  void validate() const {
    require(std::isfinite(scale) && scale >= 0.0, "guidance scale must be finite and >= 0");
    require(uncond_dropout >= 0.0 && uncond_dropout <= 1.0, "guidance dropout must lie in [0, 1]");
  }
};

namespace detail {

class GuidedQuery {
 public:
  GuidedQuery(const GraphDenoiser& d, const Instruction* instr, const GuidanceConfig& g)
      : denoiser_(d), instr_(instr), scale_(is_conditional(instr) ? g.scale : 0.0) {}

  template <class State, class Level, class Fn>
  CleanPrediction run(const State& state, Level t, Fn&& predict) const {
    CleanPrediction p = predict(state, instr_, t);
    if (scale_ > 0.0) {
      const CleanPrediction u = predict(state, nullptr, t);
      for (std::size_t e = 0; e < p.size(); ++e) {
        const auto guided = apply_cfg(p.at(e), u.at(e), scale_);
        std::copy(guided.begin(), guided.end(), p.at(e).begin());
      }
    }
    return p;
  }

  CleanPrediction operator()(const SemanticGraph& state, std::span<const int> levels) const {
    auto p = run(state, levels, [&](const SemanticGraph& s, const Instruction* i, std::span<const int> l) {
      return denoiser_.predict_levels(s, i, l);
    });
    for (std::size_t e = 0; e < p.size(); ++e)
      if (p.at(e).back() != 0.0) throw InvalidArgument("denoiser predicted mass on the mask state");
    return p;
  }

  CleanPrediction operator()(const EmbeddedGraph& state, int t) const {
    return run(state, t,
               [&](const EmbeddedGraph& s, const Instruction* i, int tt) { return denoiser_.predict_embedded(s, i, tt); });
  }

 private:
  const GraphDenoiser& denoiser_;
  const Instruction* instr_;
  double scale_;
};

inline void check_frozen(const FrozenEntries* frozen, const SemanticGraph& shape) {
  if (!frozen) return;
  require(frozen->values.nodes() == shape.nodes() && frozen->values.vocab() == shape.vocab() &&
              frozen->frozen.size() == shape.entry_count(),
          "reverse_sample: frozen entries do not match the graph shape");
  for (std::size_t e = 0; e < shape.entry_count(); ++e)
    if (frozen->frozen[e]) require(!frozen->values.is_mask(e), "reverse_sample: frozen entries must be clean");
}

inline SemanticGraph reverse_sample_embedded(const GraphDenoiser& denoiser, const Instruction* instr,
                                             const GuidanceConfig& guidance, const GraphSchedule& sched, int nodes,
                                             Rng& rng, const FrozenEntries* frozen) {
  const SemanticGraph shape(sched.vocab, nodes);
  const auto& g = sched.category.gaussian();
  const GuidedQuery query(denoiser, instr, guidance);
  EmbeddedGraph x(shape);
  std::vector<std::vector<double>> frozen_onehot(shape.entry_count());
  auto clamp = [&](int level) {
    if (!frozen) return;
    const double ab = g.alpha_bar(level);
    for (std::size_t e = 0; e < x.size(); ++e) {
      if (!frozen->frozen[e]) continue;
      auto v = x.at(e);
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double clean = static_cast<int>(i) == frozen->values.value(e) ? 1.0 : 0.0;
        v[i] = level == 0 ? clean : std::sqrt(ab) * clean + std::sqrt(1.0 - ab) * rng.normal();
      }
    }
  };
  for (std::size_t e = 0; e < x.size(); ++e)
    for (double& v : x.at(e)) v = rng.normal();
  clamp(sched.steps());
  for (int t = sched.steps(); t >= 1; --t) {
    const CleanPrediction p = query(x, t);
    const auto [c0, ct] = g.posterior_mean_coefficients(t);
    const double sd = std::sqrt(g.posterior_variance(t));
    for (std::size_t e = 0; e < x.size(); ++e) {
      auto v = x.at(e);
      const auto pe = p.at(e);
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = c0 * pe[i] + ct * v[i];
        if (t > 1) v[i] += sd * rng.normal();
      }
    }
    clamp(t - 1);
  }
  SemanticGraph out(sched.vocab, nodes);
  for (std::size_t e = 0; e < x.size(); ++e) {
    const auto v = x.at(e);
    out.set_value(e, static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()));
    if (frozen && frozen->frozen[e]) out.set_value(e, frozen->values.value(e));
  }
  return out;
}

}  // namespace detail

/// Ancestral sampling of a clean graph, starting from the kernel's terminal
/// state (all-mask for mask kernels) with frozen entries clamped throughout.
///
/// Under the mask kernels, entries are visited in a fixed order within each
/// step and the denoiser is re-queried whenever a visited entry changes, so
/// several entries resolved at the same step remain jointly consistent.
inline SemanticGraph reverse_sample(const GraphDenoiser& denoiser, const Instruction* instr,
                                    const GuidanceConfig& guidance, const GraphSchedule& sched, int nodes, Rng& rng,
                                    const FrozenEntries* frozen = nullptr) {
  guidance.validate();
  require(nodes >= 1, "reverse_sample: nodes must be >= 1");
  const SemanticGraph shape(sched.vocab, nodes);
  detail::check_frozen(frozen, shape);
  if (sched.kernel == KernelKind::kGaussianEmbedding)
    return detail::reverse_sample_embedded(denoiser, instr, guidance, sched, nodes, rng, frozen);

  const int T = sched.steps();
  SemanticGraph state = SemanticGraph::all_mask(sched.vocab, nodes);
  if (is_mask_kernel(sched.kernel)) {
    for (VarKind k : kVarKinds) {
      const auto& s = sched.of(k);
      for (int x0 = 0; x0 < s.states() - 1; ++x0)
        require(s.cumulative(T)(s.mask_state(), x0) > 1.0 - 1e-9, "reverse_sample: schedule terminal state is not all-mask");
    }
  } else {
    require(!sched.category.options().freeze_empty, "reverse_sample: uniform kernel with frozen empties has no prior");
    for (std::size_t e = 0; e < state.entry_count(); ++e)
      state.set_value(e, static_cast<int>(rng.index(static_cast<std::size_t>(sched.vocab.states(state.kind(e)) - 1))));
  }
  auto is_frozen = [&](std::size_t e) { return frozen && frozen->frozen[e]; };
  for (std::size_t e = 0; e < state.entry_count(); ++e)
    if (is_frozen(e)) state.set_value(e, frozen->values.value(e));

  const detail::GuidedQuery query(denoiser, instr, guidance);
  std::vector<double> post(64);
  auto posterior = [&](std::size_t e, const CleanPrediction& p, int t) -> std::span<double> {
    const auto& s = sched.of(state.kind(e));
    std::span<double> out(post.data(), static_cast<std::size_t>(s.states()));
    if (!detail::model_posterior_into(state.value(e), p.at(e), t, s, out))
      throw InvalidArgument("reverse_sample: denoiser prediction is inconsistent with the current state");
    return out;
  };
  post.resize(static_cast<std::size_t>(std::max({sched.vocab.states(VarKind::kCategory),
                                                  sched.vocab.states(VarKind::kCode),
                                                  sched.vocab.states(VarKind::kRelation)})));

  // frozen entries are known clean values (level 0); entries resolved to a
  // new value during step t are observed at level t - 1
  std::vector<int> levels(state.entry_count());
  auto reset_levels = [&](int t) {
    for (std::size_t e = 0; e < levels.size(); ++e) levels[e] = is_frozen(e) ? 0 : t;
  };

  if (sched.kernel == KernelKind::kUniform) {
    for (int t = T; t >= 1; --t) {
      reset_levels(t);
      const CleanPrediction p = query(state, levels);
      SemanticGraph next = state;
      for (std::size_t e = 0; e < state.entry_count(); ++e)
        if (!is_frozen(e)) next.set_value(e, static_cast<int>(rng.categorical(posterior(e, p, t))));
      state = std::move(next);
    }
    return state;
  }

  std::vector<std::vector<std::size_t>> units;
  if (sched.kernel == KernelKind::kJointMask) {
    units = detail::node_groups(state);
  } else {
    for (std::size_t e = 0; e < state.entry_count(); ++e) units.push_back({e});
  }

  for (int t = T; t >= 1; --t) {
    reset_levels(t);
    CleanPrediction p = query(state, levels);
    bool stale = false;
    auto refresh = [&] {
      if (stale) {
        p = query(state, levels);
        stale = false;
      }
    };
    auto resolve = [&](std::size_t e, bool forbid_mask) {
      refresh();
      auto dist = posterior(e, p, t);
      if (forbid_mask) dist.back() = 0.0;
      const int v = static_cast<int>(rng.categorical(dist));
      if (v != state.value(e)) {
        state.set_value(e, v);
        levels[e] = t - 1;
        stale = true;
      }
    };
    for (const auto& unit : units) {
      std::vector<std::size_t> masked, visible;
      for (std::size_t e : unit) {
        if (is_frozen(e)) continue;
        (state.is_mask(e) ? masked : visible).push_back(e);
      }
      for (std::size_t e : visible) resolve(e, false);
      if (masked.empty()) continue;
      if (unit.size() == 1) {
        resolve(masked.front(), false);
        continue;
      }
      // joint kernel: one unmask event for every masked entry of the node
      refresh();
      const double stay = posterior(masked.front(), p, t).back();
      if (rng.uniform() < stay) continue;
      for (std::size_t e : masked) resolve(e, true);
    }
  }
  require(!state.has_mask(), "reverse_sample: chain ended with mask states");
  return state;
}

/// Clears codes and relations of empty nodes and fills empty codes or
/// relations of real nodes with the first real value / `none`. Only the
/// non-absorbing ablation kernels can produce such states.
inline SemanticGraph enforce_empty_convention(SemanticGraph g) {
  const auto& v = g.vocab();
  for (int j = 0; j < g.nodes(); ++j) {
    const bool empty = g.is_empty_node(j);
    for (int m = 0; m < v.codes_per_node; ++m) {
      if (empty) g.set_code(j, m, v.empty(VarKind::kCode));
      else if (g.code(j, m) == v.empty(VarKind::kCode)) g.set_code(j, m, 0);
    }
    for (int k = j + 1; k < g.nodes(); ++k) {
      if (empty || g.is_empty_node(k)) g.set_relation(j, k, v.empty(VarKind::kRelation));
      else if (g.relation(j, k) == v.empty(VarKind::kRelation)) g.set_relation(j, k, static_cast<int>(Relation::kNone));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Variational bound

struct LossWeights {
  double code = 1.0;       // lambda_f
  double relation = 10.0;  // lambda_e

  void validate() const {
    require(std::isfinite(code) && std::isfinite(relation) && code >= 0.0 && relation >= 0.0,
            "loss weights must be finite and non-negative");
  }
};

struct VariationalBound {
  double category = 0.0;
  double code = 0.0;
  double relation = 0.0;
  double total = 0.0;
};

namespace detail {

inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(kl, 0.0);
}

}  // namespace detail

/// Monte Carlo estimate of sum_{t>=2} KL(q(x_{t-1}|x_t,x_0) || p(x_{t-1}|x_t))
/// plus the t = 1 reconstruction term -log p(x_0 | x_1), per variable kind,
/// combined as L_C + lambda_f L_F + lambda_e L_E. The constant prior term is
/// excluded.
inline VariationalBound variational_bound(const GraphDenoiser& denoiser, const SemanticGraph& clean,
                                          const Instruction* instr, const GraphSchedule& sched,
                                          const LossWeights& weights, Rng& rng, int n_mc) {
  require(n_mc >= 1, "variational_bound: n_mc must be >= 1");
  require(sched.kernel != KernelKind::kGaussianEmbedding, "variational_bound: defined for discrete kernels only");
  weights.validate();
  validate_clean_graph(clean);
  std::array<double, 3> sums{};
  for (int rep = 0; rep < n_mc; ++rep) {
    for (int t = 1; t <= sched.steps(); ++t) {
      const SemanticGraph noisy = forward_sample_graph(clean, t, sched, rng);
      const CleanPrediction p = denoiser.predict(noisy, instr, t);
      for (std::size_t e = 0; e < clean.entry_count(); ++e) {
        const auto& s = sched.of(clean.kind(e));
        const auto model = model_posterior(noisy.value(e), p.at(e), t, s);
        double term;
        if (t == 1) {
          const double prob = model[clean.value(e)];
          term = prob > 0.0 ? -std::log(prob) : std::numeric_limits<double>::infinity();
        } else {
          term = detail::kl_divergence(true_posterior(noisy.value(e), clean.value(e), t, s), model);
        }
        sums[static_cast<int>(clean.kind(e))] += term;
      }
    }
  }
  VariationalBound vb;
  vb.category = sums[0] / n_mc;
  vb.code = sums[1] / n_mc;
  vb.relation = sums[2] / n_mc;
  vb.total = vb.category + weights.code * vb.code + weights.relation * vb.relation;
  return vb;
}

}  // namespace scenediff
