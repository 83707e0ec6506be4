#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scenediff/scene_model.hpp"

namespace scenediff {

using LayoutMatrix = Eigen::MatrixXd;  // N x 8

inline std::pair<double, double> rotation_encode(double r) {
  require(std::isfinite(r), "rotation_encode: non-finite angle");
  return {std::cos(r), std::sin(r)};
}

/// Angle in [-pi, pi) of a (cos, sin) pair; the pair need not be normalized.
inline double rotation_decode(double c, double s) {
  require(std::isfinite(c) && std::isfinite(s), "rotation_decode: non-finite input");
  require(c != 0.0 || s != 0.0, "rotation_decode: zero vector has no angle");
  return wrap_angle(std::atan2(s, c));
}

inline LayoutMatrix layout_of(const Scene& scene) {
  LayoutMatrix L(static_cast<Eigen::Index>(scene.size()), kLayoutColumns);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const auto& o = scene.objects[i];
    const auto [c, s] = rotation_encode(o.rotation);
    L.row(static_cast<Eigen::Index>(i)) << o.location[0], o.location[1], o.location[2], o.size[0], o.size[1],
        o.size[2], c, s;
  }
  return L;
}

/// Cumulative signal coefficients of a variance-preserving Gaussian chain.
class GaussianSchedule {
 public:
  GaussianSchedule() = default;
  GaussianSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    const int T = steps();
    alpha_bar_.assign(T + 1, 1.0);
    for (int t = 1; t <= T; ++t) alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - beta_[t - 1]);
    posterior_variance_.assign(T, 0.0);
    for (int t = 1; t <= T; ++t)
      posterior_variance_[t - 1] = (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]) * beta(t);
  }

  int steps() const noexcept { return static_cast<int>(beta_.size()); }
  double alpha_bar(int t) const { return alpha_bar_.at(t); }
  double beta(int t) const { return beta_.at(t - 1); }
  double alpha(int t) const { return 1.0 - beta(t); }
  /// Variance of q(x_{t-1} | x_t, x_0).
  double posterior_variance(int t) const { return posterior_variance_.at(t - 1); }

  /// Coefficients (on x_0, on x_t) of the mean of q(x_{t-1} | x_t, x_0).
  std::pair<double, double> posterior_mean_coefficients(int t) const {
    const double ab = alpha_bar(t), ab_prev = alpha_bar(t - 1);
    return {beta(t) * std::sqrt(ab_prev) / (1.0 - ab), (1.0 - ab_prev) * std::sqrt(alpha(t)) / (1.0 - ab)};
  }

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
  std::vector<double> posterior_variance_;
};

/// Cosine schedule; per-step betas are clipped to (0, 0.999] and the
/// cumulative products recomputed from the clipped values.
inline GaussianSchedule build_gaussian_schedule(int T) {
  require(T >= 1, "build_gaussian_schedule: T must be >= 1");
  constexpr double s = 0.008;
  auto f = [&](int t) {
    const double c = std::cos((static_cast<double>(t) / T + s) / (1.0 + s) * kPi / 2.0);
    return c * c;
  };
  std::vector<double> betas(T);
  for (int t = 1; t <= T; ++t) {
    const double b = 1.0 - f(t) / f(t - 1);
    betas[t - 1] = std::clamp(b, 1e-12, 0.999);
  }
  return GaussianSchedule(std::move(betas));
}

/// Per-column z-scoring of layout rows. The rotation columns are left in
/// unit scale so decoded (cos, sin) pairs stay comparable.
struct LayoutStats {
  std::array<double, kLayoutColumns> mean{};
  std::array<double, kLayoutColumns> stddev{1, 1, 1, 1, 1, 1, 1, 1};

  static LayoutStats compute(const std::vector<LayoutMatrix>& layouts) {
    LayoutStats st;
    std::size_t n = 0;
    std::array<double, kLayoutColumns> sum{}, sq{};
    for (const auto& L : layouts)
      for (Eigen::Index i = 0; i < L.rows(); ++i, ++n)
        for (int c = 0; c < kLayoutColumns; ++c) sum[c] += L(i, c);
    require(n > 0, "LayoutStats: no layout rows");
    for (int c = 0; c < kLayoutColumns; ++c) st.mean[c] = sum[c] / static_cast<double>(n);
    for (const auto& L : layouts)
      for (Eigen::Index i = 0; i < L.rows(); ++i)
        for (int c = 0; c < kLayoutColumns; ++c) sq[c] += (L(i, c) - st.mean[c]) * (L(i, c) - st.mean[c]);
    for (int c = 0; c < kLayoutColumns; ++c) {
      const double sd = std::sqrt(sq[c] / static_cast<double>(n));
      st.stddev[c] = sd > 1e-9 ? sd : 1.0;
    }
    st.mean[6] = st.mean[7] = 0.0;
    st.stddev[6] = st.stddev[7] = 1.0;
    return st;
  }

  LayoutMatrix standardize(const LayoutMatrix& L) const {
    LayoutMatrix out = L;
    for (Eigen::Index i = 0; i < L.rows(); ++i)
      for (int c = 0; c < kLayoutColumns; ++c) out(i, c) = (L(i, c) - mean[c]) / stddev[c];
    return out;
  }

  LayoutMatrix destandardize(const LayoutMatrix& Z) const {
    LayoutMatrix out = Z;
    for (Eigen::Index i = 0; i < Z.rows(); ++i)
      for (int c = 0; c < kLayoutColumns; ++c) out(i, c) = Z(i, c) * stddev[c] + mean[c];
    return out;
  }

  bool operator==(const LayoutStats&) const = default;
};

/// Noise predictor eps(L_t, t, G).
class EpsDenoiser {
 public:
  virtual ~EpsDenoiser() = default;
  virtual LayoutMatrix predict(const LayoutMatrix& noisy, int t, const SemanticGraph& graph) const = 0;
};

struct ForwardLayoutSample {
  LayoutMatrix noisy;
  LayoutMatrix noise;
};

inline ForwardLayoutSample forward_sample_layout(const LayoutMatrix& clean, int t, const GaussianSchedule& sched,
                                                 Rng& rng) {
  require(t >= 0 && t <= sched.steps(), "forward_sample_layout: t out of range");
  require(clean.allFinite(), "forward_sample_layout: non-finite layout");
  ForwardLayoutSample out{clean, LayoutMatrix::Zero(clean.rows(), clean.cols())};
  if (t == 0) return out;
  for (Eigen::Index i = 0; i < clean.rows(); ++i)
    for (Eigen::Index c = 0; c < clean.cols(); ++c) out.noise(i, c) = rng.normal();
  const double ab = sched.alpha_bar(t);
  out.noisy = std::sqrt(ab) * clean + std::sqrt(1.0 - ab) * out.noise;
  return out;
}

/// How strictly a dataset graph must agree with the query graph.
enum class GraphMatch { kExact = 0, kCategoriesAndRelations = 1, kCategoryMultiset = 2 };

inline const char* graph_match_name(GraphMatch m) {
  switch (m) {
    case GraphMatch::kExact: return "exact";
    case GraphMatch::kCategoriesAndRelations: return "categories+relations";
    case GraphMatch::kCategoryMultiset: return "category-multiset";
  }
  return "?";
}

struct LayoutExample {
  SemanticGraph graph;  // compact (no empty nodes)
  LayoutMatrix layout;  // standardized, one row per node
};

/// Bayes-optimal noise predictor under the empirical mixture of the dataset
/// layouts whose graphs match the query. Matching falls back from the exact
/// graph to (C, E) and then to the category multiset.
class ExactEpsDenoiser : public EpsDenoiser {
 public:
  struct Match {
    GraphMatch level = GraphMatch::kExact;
    std::vector<std::size_t> examples;
    std::vector<std::vector<int>> row_maps;  // query node -> example row
  };

  ExactEpsDenoiser(std::vector<LayoutExample> data, GaussianSchedule schedule)
      : data_(std::move(data)), schedule_(std::move(schedule)) {
    require(!data_.empty(), "ExactEpsDenoiser: empty dataset");
    for (const auto& ex : data_)
      require(ex.layout.rows() == ex.graph.nodes() && ex.layout.cols() == kLayoutColumns,
              "ExactEpsDenoiser: layout shape does not match graph");
  }

  const GaussianSchedule& schedule() const noexcept { return schedule_; }
  const std::vector<LayoutExample>& data() const noexcept { return data_; }

  /// Invoked with a message whenever matching falls back below exact.
  std::function<void(const std::string&)> on_fallback;

  Match match(const SemanticGraph& query) const {
    for (GraphMatch level : {GraphMatch::kExact, GraphMatch::kCategoriesAndRelations, GraphMatch::kCategoryMultiset}) {
      Match m{level, {}, {}};
      for (std::size_t i = 0; i < data_.size(); ++i) {
        if (auto rows = align(query, data_[i].graph, level)) {
          m.examples.push_back(i);
          m.row_maps.push_back(std::move(*rows));
        }
      }
      if (!m.examples.empty()) {
        if (level != GraphMatch::kExact && on_fallback)
          on_fallback(std::string("layout graph match fell back to ") + graph_match_name(level));
        return m;
      }
    }
    throw Unsatisfiable("layout-graph-match", "no dataset layout matches the graph under any policy");
  }

  /// Posterior mean of the clean layout given L_t, plus the normalized weights.
  LayoutMatrix posterior_mean(const LayoutMatrix& noisy, int t, const Match& m, std::vector<double>* weights = nullptr) const {
    const double ab = schedule_.alpha_bar(t);
    const double sab = std::sqrt(ab);
    std::vector<double> logw(m.examples.size());
    for (std::size_t a = 0; a < m.examples.size(); ++a) {
      const auto& L = data_[m.examples[a]].layout;
      double d2 = 0.0;
      for (Eigen::Index i = 0; i < noisy.rows(); ++i)
        for (Eigen::Index c = 0; c < noisy.cols(); ++c) {
          const double diff = noisy(i, c) - sab * L(m.row_maps[a][i], c);
          d2 += diff * diff;
        }
      logw[a] = -d2 / (2.0 * (1.0 - ab));
    }
    const double lse = log_sum_exp(logw);
    LayoutMatrix mean = LayoutMatrix::Zero(noisy.rows(), noisy.cols());
    for (std::size_t a = 0; a < m.examples.size(); ++a) {
      logw[a] = std::exp(logw[a] - lse);
      const auto& L = data_[m.examples[a]].layout;
      for (Eigen::Index i = 0; i < noisy.rows(); ++i) mean.row(i) += logw[a] * L.row(m.row_maps[a][i]);
    }
    if (weights) *weights = std::move(logw);
    return mean;
  }

  LayoutMatrix predict(const LayoutMatrix& noisy, int t, const SemanticGraph& graph) const override {
    require(t >= 1 && t <= schedule_.steps(), "ExactEpsDenoiser: t out of range");
    require(noisy.rows() == graph.nodes(), "ExactEpsDenoiser: layout rows do not match graph nodes");
    return predict_matched(noisy, t, match(graph));
  }

  LayoutMatrix predict_matched(const LayoutMatrix& noisy, int t, const Match& m) const {
    const double ab = schedule_.alpha_bar(t);
    const LayoutMatrix mean = posterior_mean(noisy, t, m);
    return (noisy - std::sqrt(ab) * mean) / std::sqrt(1.0 - ab);
  }

 private:
  static std::optional<std::vector<int>> align(const SemanticGraph& q, const SemanticGraph& e, GraphMatch level) {
    if (q.nodes() != e.nodes() || !(q.vocab() == e.vocab())) return std::nullopt;
    const int n = q.nodes();
    std::vector<int> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    switch (level) {
      case GraphMatch::kExact:
        if (!(q == e)) return std::nullopt;
        return rows;
      case GraphMatch::kCategoriesAndRelations:
        for (int j = 0; j < n; ++j)
          if (q.category(j) != e.category(j)) return std::nullopt;
        for (int j = 0; j < n; ++j)
          for (int k = j + 1; k < n; ++k)
            if (q.relation(j, k) != e.relation(j, k)) return std::nullopt;
        return rows;
      case GraphMatch::kCategoryMultiset: {
        std::vector<int> qi(n), ei(n);
        std::iota(qi.begin(), qi.end(), 0);
        std::iota(ei.begin(), ei.end(), 0);
        std::stable_sort(qi.begin(), qi.end(), [&](int a, int b) { return q.category(a) < q.category(b); });
        std::stable_sort(ei.begin(), ei.end(), [&](int a, int b) { return e.category(a) < e.category(b); });
        for (int r = 0; r < n; ++r) {
          if (q.category(qi[r]) != e.category(ei[r])) return std::nullopt;
          rows[qi[r]] = ei[r];
        }
        return rows;
      }
    }
    return std::nullopt;
  }

  std::vector<LayoutExample> data_;
  GaussianSchedule schedule_;
};

/// Rows whose values are known; they are re-noised to the current level at
/// every reverse step and returned exactly.
struct FrozenRows {
  std::vector<bool> frozen;
  LayoutMatrix values;  // standardized
};

namespace detail {

inline LayoutMatrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  LayoutMatrix z(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) z(i, c) = rng.normal();
  return z;
}

inline void clamp_rows(LayoutMatrix& L, const FrozenRows* frozen, int t, const GaussianSchedule& sched, Rng& rng) {
  if (!frozen) return;
  const double ab = sched.alpha_bar(t);
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    if (!frozen->frozen[i]) continue;
    if (t == 0) {
      L.row(i) = frozen->values.row(i);
    } else {
      for (Eigen::Index c = 0; c < L.cols(); ++c)
        L(i, c) = std::sqrt(ab) * frozen->values(i, c) + std::sqrt(1.0 - ab) * rng.normal();
    }
  }
}

}  // namespace detail

/// Ancestral sampling of a standardized layout for `graph` (compact).
/// The last step is deterministic.
inline LayoutMatrix reverse_sample_layout_standardized(const EpsDenoiser& denoiser, const SemanticGraph& graph,
                                                       const GaussianSchedule& sched, Rng& rng,
                                                       const FrozenRows* frozen = nullptr) {
  require(!graph.has_mask(), "reverse_sample_layout: graph must be clean");
  const Eigen::Index n = graph.nodes();
  if (frozen)
    require(static_cast<Eigen::Index>(frozen->frozen.size()) == n && frozen->values.rows() == n,
            "reverse_sample_layout: frozen rows do not match graph");
  LayoutMatrix L = detail::standard_normal(n, kLayoutColumns, rng);
  detail::clamp_rows(L, frozen, sched.steps(), sched, rng);
  for (int t = sched.steps(); t >= 1; --t) {
    const LayoutMatrix eps = denoiser.predict(L, t, graph);
    require(eps.allFinite() && eps.rows() == n, "reverse_sample_layout: denoiser returned invalid output");
    const double b = sched.beta(t);
    LayoutMatrix mean = (L - b / std::sqrt(1.0 - sched.alpha_bar(t)) * eps) / std::sqrt(1.0 - b);
    if (t > 1) mean += std::sqrt(sched.posterior_variance(t)) * detail::standard_normal(n, kLayoutColumns, rng);
    L = std::move(mean);
    detail::clamp_rows(L, frozen, t - 1, sched, rng);
  }
  return L;
}

/// Rescales each (cos, sin) pair to unit norm; a zero pair becomes (1, 0).
inline void normalize_rotation_columns(LayoutMatrix& L) {
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    const double norm = std::hypot(L(i, 6), L(i, 7));
    if (norm > 0.0) {
      L(i, 6) /= norm;
      L(i, 7) /= norm;
    } else {
      L(i, 6) = 1.0;
      L(i, 7) = 0.0;
    }
  }
}

/// Samples a layout in scene units with unit-norm rotation columns.
inline LayoutMatrix reverse_sample_layout(const EpsDenoiser& denoiser, const SemanticGraph& graph,
                                          const GaussianSchedule& sched, const LayoutStats& stats, Rng& rng,
                                          const FrozenRows* frozen = nullptr) {
  LayoutMatrix L = stats.destandardize(reverse_sample_layout_standardized(denoiser, graph, sched, rng, frozen));
  normalize_rotation_columns(L);
  return L;
}

/// Monte Carlo estimate of E||eps - eps_hat||^2 per layout coordinate,
/// with t uniform on {1..T} and examples drawn uniformly.
inline double simple_loss(const EpsDenoiser& denoiser, const std::vector<LayoutExample>& data,
                          const GaussianSchedule& sched, int n_samples, Rng& rng) {
  require(n_samples >= 1, "simple_loss: n_samples must be >= 1");
  require(!data.empty(), "simple_loss: empty dataset");
  double total = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    const auto& ex = data[rng.index(data.size())];
    const int t = rng.integer(1, sched.steps());
    const auto fwd = forward_sample_layout(ex.layout, t, sched, rng);
    const LayoutMatrix eps_hat = denoiser.predict(fwd.noisy, t, ex.graph);
    total += (fwd.noise - eps_hat).squaredNorm() / static_cast<double>(ex.layout.size());
  }
  return total / n_samples;
}

}  // namespace scenediff
