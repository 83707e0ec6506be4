#include <gtest/gtest.h>

#include <map>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace scenediff;

namespace {

// two categories, two codes, one code per node
const GraphVocab kVocab{2, 2, 1};
constexpr int kL = static_cast<int>(Relation::kLeftOf);
constexpr int kR = static_cast<int>(Relation::kRightOf);

SemanticGraph two_node(int c0, int c1, int f0, int f1, int e01) {
  SemanticGraph g(kVocab, 2);
  g.set_category(0, c0);
  g.set_category(1, c1);
  g.set_code(0, 0, f0);
  g.set_code(1, 0, f1);
  g.set_relation(0, 1, e01);
  return g;
}

// G1 and G2 realize (0 left of 1); G3 has the opposite relation; G4 has one object
std::vector<SemanticGraph> four_graphs() {
  const int ce = kVocab.empty(VarKind::kCategory), fe = kVocab.empty(VarKind::kCode),
            ee = kVocab.empty(VarKind::kRelation);
  return {two_node(0, 1, 0, 0, kL), two_node(0, 1, 1, 1, kL), two_node(0, 1, 0, 1, kR), two_node(0, ce, 1, fe, ee)};
}

Instruction left_of() { return Instruction{{{0, Relation::kLeftOf, 1}}, std::nullopt, ""}; }

class UniformDenoiser : public GraphDenoiser {
 public:
  CleanPrediction predict(const SemanticGraph& state, const Instruction*, int) const override {
    CleanPrediction p(state);
    for (std::size_t e = 0; e < p.size(); ++e) {
      auto d = p.at(e);
      for (std::size_t i = 0; i + 1 < d.size(); ++i) d[i] = 1.0 / static_cast<double>(d.size() - 1);
    }
    return p;
  }
};

Histogram sample_histogram(const GraphDenoiser& den, const Instruction* instr, const GraphSchedule& sched, int nodes,
                           int n, std::uint64_t seed, GuidanceConfig guidance = {}) {
  Rng rng(seed);
  std::vector<SemanticGraph> out;
  for (int i = 0; i < n; ++i) {
    auto g = reverse_sample(den, instr, guidance, sched, nodes, rng);
    if (!is_mask_kernel(sched.kernel)) g = enforce_empty_convention(std::move(g));
    out.push_back(std::move(g));
  }
  return histogram(out);
}

}  // namespace

TEST(GraphSchedule, HandComputedTwoStepMatrices) {
  const auto s = build_schedule(2, 2, KernelKind::kIndependentMask, {0.0, false});
  // states: 0, 1 real, 2 empty, 3 mask
  Eigen::MatrixXd q1(4, 4);
  q1 << 0.5, 0, 0, 0,  //
      0, 0.5, 0, 0,    //
      0, 0, 0.5, 0,    //
      0.5, 0.5, 0.5, 1;
  EXPECT_LE((s.cumulative(1) - q1).cwiseAbs().maxCoeff(), 1e-15);
  Eigen::MatrixXd q2 = Eigen::MatrixXd::Zero(4, 4);
  q2.row(3).setOnes();
  EXPECT_LE((s.cumulative(2) - q2).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(GraphSchedule, StochasticChainAndTerminal) {
  Rng rng(1);
  for (KernelKind kernel : {KernelKind::kIndependentMask, KernelKind::kUniform, KernelKind::kJointMask,
                            KernelKind::kGaussianEmbedding})
    for (int trial = 0; trial < 30; ++trial) {
      const int K = rng.integer(1, 12), T = rng.integer(1, 40);
      const ScheduleOptions opts{rng.uniform(0.0, 0.05), rng.uniform() < 0.3};
      const auto s = build_schedule(T, K, kernel, opts);
      for (int t = 1; t <= T; ++t) {
        for (int n = 0; n < s.states(); ++n) {
          ASSERT_NEAR(s.step(t).col(n).sum(), 1.0, 1e-12);
          ASSERT_NEAR(s.cumulative(t).col(n).sum(), 1.0, 1e-12);
        }
        ASSERT_LE((s.cumulative(t) - s.step(t) * s.cumulative(t - 1)).cwiseAbs().maxCoeff(), 1e-12);
        for (int m = 0; m < s.states(); ++m) ASSERT_EQ(s.step(t)(m, s.mask_state()), m == s.mask_state() ? 1.0 : 0.0);
        if (is_mask_kernel(kernel)) {
          ASSERT_NEAR(s.alpha(t) + K * s.beta(t) + s.gamma(t), 1.0, 1e-12);
        }
      }
      if (is_mask_kernel(kernel)) {
        for (int n = 0; n < K + (opts.freeze_empty ? 0 : 1); ++n) ASSERT_GE(s.cumulative(T)(s.mask_state(), n), 0.999);
      }
    }
}

TEST(GraphSchedule, DefaultTerminalIsAllMask) {
  for (int T : {10, 25, 100})
    for (int K : {1, 4, 8, 16, 11}) {
      const auto s = build_schedule(T, K, KernelKind::kIndependentMask);
      EXPECT_NEAR(s.gamma(T), 1.0, 0.0);
      for (int n = 0; n <= K; ++n) EXPECT_GE(s.cumulative(T)(s.mask_state(), n), 0.999);
    }
}

TEST(GraphSchedule, ErrorsOnNegativeAlpha) {
  EXPECT_THROW(build_schedule(3, 2, KernelKind::kIndependentMask, {0.6, false}), InvalidArgument);
  EXPECT_THROW(build_schedule(0, 2, KernelKind::kIndependentMask), InvalidArgument);
  EXPECT_THROW(build_schedule(3, 0, KernelKind::kIndependentMask), InvalidArgument);
  EXPECT_THROW(build_schedule(3, 2, KernelKind::kIndependentMask, {-0.1, false}), InvalidArgument);
}

TEST(GraphSchedule, UniformKernelTerminalIsUniform) {
  const auto s = build_schedule(7, 3, KernelKind::kUniform);
  for (int n = 0; n <= 3; ++n)
    for (int m = 0; m <= 3; ++m) EXPECT_NEAR(s.cumulative(7)(m, n), 0.25, 1e-12);
}

TEST(GraphSchedule, KernelNames) {
  for (KernelKind k : {KernelKind::kIndependentMask, KernelKind::kUniform, KernelKind::kJointMask,
                       KernelKind::kGaussianEmbedding})
    EXPECT_EQ(kernel_from_name(kernel_name(k)), k);
  EXPECT_THROW(kernel_from_name("gaussian"), InvalidArgument);
}

TEST(ForwardProcess, ZeroStepAndAbsorbingMask) {
  const auto s = build_schedule(10, 3, KernelKind::kIndependentMask);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(forward_sample(1, 0, s, rng), 1);
    EXPECT_EQ(forward_sample(s.mask_state(), rng.integer(0, 10), s, rng), s.mask_state());
  }
  EXPECT_THROW(forward_sample(1, 11, s, rng), InvalidArgument);
}

TEST(ForwardProcess, MonteCarloMatchesCumulativeColumn) {
  const auto s = build_schedule(20, 4, KernelKind::kIndependentMask, {0.05, false});
  Rng rng(3);
  const int n = 100000;
  for (auto [t, x0] : {std::pair{5, 0}, std::pair{12, 4}}) {
    std::vector<double> counts(s.states(), 0.0);
    for (int i = 0; i < n; ++i) counts[forward_sample(x0, t, s, rng)] += 1.0;
    for (int m = 0; m < s.states(); ++m) {
      const double p = s.cumulative(t)(m, x0);
      const double se = std::sqrt(std::max(p * (1 - p), 1e-12) / n);
      EXPECT_LE(std::abs(counts[m] / n - p), 3 * se + 1e-12) << "t=" << t << " x0=" << x0 << " m=" << m;
    }
  }
}

TEST(Posterior, MatchesEnumerationOracle) {
  Rng rng(4);
  for (KernelKind kernel : {KernelKind::kIndependentMask, KernelKind::kUniform, KernelKind::kJointMask,
                            KernelKind::kGaussianEmbedding})
    for (int trial = 0; trial < 20; ++trial) {
      const int K = rng.integer(2, 5), T = rng.integer(2, 6);
      const ScheduleOptions opts{rng.uniform(0.0, 0.1), rng.uniform() < 0.3};
      const auto s = build_schedule(T, K, kernel, opts);
      for (int t = 1; t <= T; ++t)
        for (int x0 = 0; x0 <= K; ++x0)
          for (int xt = 0; xt < s.states(); ++xt) {
            const auto ref = oracle::posterior(xt, x0, t, T, K, kernel, opts.leak, opts.freeze_empty);
            if (ref.empty()) {
              ASSERT_THROW(true_posterior(xt, x0, t, s), InvalidArgument);
              continue;
            }
            const auto got = true_posterior(xt, x0, t, s);
            for (int a = 0; a < s.states(); ++a) ASSERT_NEAR(got[a], ref[a], 1e-12);
          }
    }
}

TEST(Posterior, PointMassCases) {
  const auto s = build_schedule(5, 3, KernelKind::kIndependentMask, {0.0, false});
  // an unmasked x_t under a leak-free chain was never touched
  for (int t = 1; t <= 4; ++t) {
    const auto p = true_posterior(2, 2, t, s);
    EXPECT_EQ(p[2], 1.0);
  }
  // t = 1: x_0 itself is the previous state
  const auto p = true_posterior(s.mask_state(), 1, 1, s);
  EXPECT_EQ(p[1], 1.0);
  EXPECT_THROW(true_posterior(0, 1, 3, s), InvalidArgument);
  // the last step masks everything, so an unmasked x_T is impossible
  EXPECT_THROW(true_posterior(1, 1, 5, s), InvalidArgument);
}

TEST(Posterior, ModelPosteriorMatchesOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int K = rng.integer(2, 5), T = rng.integer(2, 6);
    const double leak = rng.uniform(0.0, 0.1);
    const auto s = build_schedule(T, K, KernelKind::kIndependentMask, {leak, false});
    std::vector<double> p(s.states(), 0.0);
    double z = 0.0;
    for (int i = 0; i <= K; ++i) z += p[i] = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
    if (z == 0.0) p[0] = z = 1.0;
    for (double& v : p) v /= z;
    for (int t = 1; t <= T; ++t)
      for (int xt = 0; xt < s.states(); ++xt) {
        const auto ref = oracle::model_posterior(xt, p, t, T, K, KernelKind::kIndependentMask, leak, false);
        if (ref.empty()) {
          ASSERT_THROW(model_posterior(xt, p, t, s), InvalidArgument);
          continue;
        }
        const auto got = model_posterior(xt, p, t, s);
        for (int a = 0; a < s.states(); ++a) ASSERT_NEAR(got[a], ref[a], 1e-12);
      }
  }
}

TEST(Posterior, ModelPosteriorPointMassAndSymmetry) {
  const auto s = build_schedule(6, 3, KernelKind::kIndependentMask, {0.03, false});
  for (int x0 = 0; x0 <= 3; ++x0) {
    std::vector<double> p(s.states(), 0.0);
    p[x0] = 1.0;
    const auto got = model_posterior(s.mask_state(), p, 4, s);
    const auto ref = true_posterior(s.mask_state(), x0, 4, s);
    for (int a = 0; a < s.states(); ++a) EXPECT_NEAR(got[a], ref[a], 1e-15);
  }
  const std::vector<double> uniform{1.0 / 3, 1.0 / 3, 1.0 / 3, 0.0, 0.0};
  const auto sym = model_posterior(s.mask_state(), uniform, 4, s);
  EXPECT_NEAR(sym[0], sym[1], 1e-15);
  EXPECT_NEAR(sym[1], sym[2], 1e-15);
  std::vector<double> on_mask(s.states(), 0.0);
  on_mask[s.mask_state()] = 1.0;
  EXPECT_THROW(model_posterior(s.mask_state(), on_mask, 4, s), InvalidArgument);
}

TEST(GaussianKernel, PosteriorMatchesPrecisionForm) {
  const auto s = build_schedule(10, 3, KernelKind::kGaussianEmbedding);
  const auto& g = s.gaussian();
  const std::vector<double> xt{0.3, -1.2, 0.8, 0.1};
  for (int t = 2; t <= 10; ++t) {
    const double ab_prev = g.alpha_bar(t - 1), a = g.alpha(t), b = g.beta(t);
    const double precision = 1.0 / (1.0 - ab_prev) + a / b;
    const auto post = gaussian_true_posterior(xt, 2, t, s);
    EXPECT_NEAR(post.variance, 1.0 / precision, 1e-12);
    for (int i = 0; i < 4; ++i) {
      const double mean = (std::sqrt(ab_prev) * (i == 2 ? 1.0 : 0.0) / (1.0 - ab_prev) + std::sqrt(a) * xt[i] / b) / precision;
      EXPECT_NEAR(post.mean[i], mean, 1e-12);
    }
  }
  const auto first = gaussian_true_posterior(xt, 1, 1, s);
  EXPECT_NEAR(first.mean[1], 1.0, 1e-12);
  EXPECT_NEAR(first.mean[0], 0.0, 1e-12);
  EXPECT_NEAR(first.variance, 0.0, 1e-15);
}

TEST(Guidance, ApplyCfg) {
  const std::vector<double> c{0.8, 0.2}, u{0.5, 0.5};
  EXPECT_EQ(apply_cfg(c, u, 0.0), c);
  EXPECT_EQ(apply_cfg(c, c, 3.0), c);
  EXPECT_EQ(apply_cfg(c, u, 1.0), (std::vector<double>{1.0, 0.0}));
  const auto half = apply_cfg(c, u, 0.5);
  EXPECT_NEAR(half[0], 0.95, 1e-15);
  EXPECT_NEAR(half[1], 0.05, 1e-15);
  // unnormalized inputs can clamp to nothing
  EXPECT_THROW(apply_cfg(std::vector<double>{0.1, 0.1}, std::vector<double>{0.5, 0.5}, 1.0), InvalidArgument);
  EXPECT_THROW(apply_cfg(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}, 1.0), InvalidArgument);
  GuidanceConfig bad;
  bad.scale = -1.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(EmpiricalDenoiser, AllMaskGivesDatasetMarginals) {
  const auto data = four_graphs();
  const auto sched = build_graph_schedule(10, kVocab, KernelKind::kIndependentMask);
  const EmpiricalDenoiser den(data, sched);
  const auto state = SemanticGraph::all_mask(kVocab, 2);
  const auto p = den.predict(state, nullptr, 10);
  // category of node 1: three graphs have 1, one has empty
  EXPECT_NEAR(p.at(1)[1], 0.75, 1e-12);
  EXPECT_NEAR(p.at(1)[kVocab.empty(VarKind::kCategory)], 0.25, 1e-12);
  // code of node 0: 0,1,0,1
  EXPECT_NEAR(p.at(2)[0], 0.5, 1e-12);
  EXPECT_EQ(p.at(2)[kVocab.mask(VarKind::kCode)], 0.0);
  const auto rel = p.at(4);
  EXPECT_NEAR(rel[kL], 0.5, 1e-12);
  EXPECT_NEAR(rel[kR], 0.25, 1e-12);
  for (std::size_t e = 0; e < p.size(); ++e) {
    double z = 0.0;
    for (double v : p.at(e)) z += v;
    EXPECT_NEAR(z, 1.0, 1e-9);
  }
}

TEST(EmpiricalDenoiser, InstructionFilterKeepsMatchingHalf) {
  const auto data = four_graphs();
  const EmpiricalDenoiser den(data, build_graph_schedule(10, kVocab, KernelKind::kIndependentMask));
  const auto instr = left_of();
  const auto p = den.predict(SemanticGraph::all_mask(kVocab, 2), &instr, 10);
  EXPECT_NEAR(p.at(0)[0], 1.0, 1e-12);
  EXPECT_NEAR(p.at(1)[1], 1.0, 1e-12);
  EXPECT_NEAR(p.at(2)[0], 0.5, 1e-12);
  EXPECT_NEAR(p.at(3)[1], 0.5, 1e-12);
  EXPECT_NEAR(p.at(4)[kL], 1.0, 1e-12);
  const Instruction impossible{{{1, Relation::kAbove, 0}}, std::nullopt, ""};
  try {
    den.predict(SemanticGraph::all_mask(kVocab, 2), &impossible, 10);
    FAIL() << "expected Unsatisfiable";
  } catch (const Unsatisfiable& e) {
    EXPECT_FALSE(e.stage().empty());
  }
}

TEST(EmpiricalDenoiser, SingleGraphGivesPointMass) {
  const std::vector<SemanticGraph> data{four_graphs()[2]};
  const EmpiricalDenoiser den(data, build_graph_schedule(10, kVocab, KernelKind::kIndependentMask));
  const auto p = den.predict(SemanticGraph::all_mask(kVocab, 2), nullptr, 7);
  for (std::size_t e = 0; e < p.size(); ++e) EXPECT_EQ(p.at(e)[data[0].value(e)], 1.0);
}

TEST(EmpiricalDenoiser, EvidenceWeightsObservedEntries) {
  const auto data = four_graphs();
  const EmpiricalDenoiser den(data, build_graph_schedule(4, kVocab, KernelKind::kIndependentMask, {0.0, false}));
  auto state = SemanticGraph::all_mask(kVocab, 2);
  state.set_code(0, 0, 1);  // unmasked code rules out graphs 1 and 3 under a leak-free chain
  const auto w = den.posterior_weights(state, nullptr, 2);
  EXPECT_EQ(w[0], 0.0);
  EXPECT_NEAR(w[1], 0.5, 1e-12);
  EXPECT_EQ(w[2], 0.0);
  EXPECT_NEAR(w[3], 0.5, 1e-12);
}

TEST(ReverseSample, SingleStepSamplesPrediction) {
  const auto data = four_graphs();
  const auto sched = build_graph_schedule(1, kVocab, KernelKind::kIndependentMask);
  const EmpiricalDenoiser den(data, sched);
  const auto h = sample_histogram(den, nullptr, sched, 2, 4000, 6);
  for (const auto& [key, p] : h) {
    bool known = false;
    for (const auto& g : data) known = known || g.key() == key;
    EXPECT_TRUE(known) << key;
  }
  EXPECT_LE(tv_distance(h, histogram(data)), 0.05);
}

TEST(ReverseSample, SingleGraphIsReproducedExactly) {
  const std::vector<SemanticGraph> data{four_graphs()[0]};
  const auto sched = build_graph_schedule(20, kVocab, KernelKind::kIndependentMask, {0.0, false});
  const EmpiricalDenoiser den(data, sched);
  Rng rng(7);
  for (int i = 0; i < 200; ++i) ASSERT_EQ(reverse_sample(den, nullptr, {}, sched, 2, rng), data[0]);
}

TEST(ReverseSample, RecoversEmpiricalDistribution) {
  auto data = four_graphs();
  data.push_back(data[0]);
  data.push_back(data[0]);
  data.push_back(data[3]);
  const auto sched = build_graph_schedule(25, kVocab, KernelKind::kIndependentMask);
  const EmpiricalDenoiser den(data, sched);
  EXPECT_LE(tv_distance(sample_histogram(den, nullptr, sched, 2, 20000, 8), histogram(data)), 0.03);
}

TEST(ReverseSample, ConditionalSamplesSatisfyInstruction) {
  const auto data = four_graphs();
  const auto sched = build_graph_schedule(25, kVocab, KernelKind::kIndependentMask);
  const EmpiricalDenoiser den(data, sched);
  const auto instr = left_of();
  for (double scale : {0.0, 1.0, 3.0}) {
    GuidanceConfig guidance;
    guidance.scale = scale;
    Rng rng(9);
    for (int i = 0; i < 300; ++i) ASSERT_TRUE(instruction_matches(reverse_sample(den, &instr, guidance, sched, 2, rng), instr));
  }
}

TEST(ReverseSample, FrozenEntriesAreKept) {
  const auto data = four_graphs();
  const auto sched = build_graph_schedule(25, kVocab, KernelKind::kIndependentMask);
  const EmpiricalDenoiser den(data, sched);
  FrozenEntries f{SemanticGraph::all_mask(kVocab, 2), std::vector<bool>(data[0].entry_count(), false)};
  f.values.set_code(0, 0, 1);
  f.frozen[f.values.code_entry(0, 0)] = true;
  Rng rng(10);
  std::map<std::string, int> seen;
  for (int i = 0; i < 500; ++i) {
    const auto g = reverse_sample(den, nullptr, {}, sched, 2, rng, &f);
    ASSERT_EQ(g.code(0, 0), 1);
    ++seen[g.key()];
  }
  // both graphs carrying code 1 on node 0 appear
  EXPECT_EQ(seen.size(), 2u);
  EXPECT_TRUE(seen.count(data[1].key()) && seen.count(data[3].key()));
  f.frozen[f.values.category_entry(0)] = true;  // frozen but still masked
  EXPECT_THROW(reverse_sample(den, nullptr, {}, sched, 2, rng, &f), InvalidArgument);
}

TEST(ReverseSample, ExchangeableUnderSlotPermutation) {
  auto data = four_graphs();
  data.push_back(data[1]);
  const std::vector<int> perm{1, 0};
  std::vector<SemanticGraph> permuted;
  for (const auto& g : data) permuted.push_back(permute_graph(g, perm));
  const auto sched = build_graph_schedule(20, kVocab, KernelKind::kIndependentMask);
  const EmpiricalDenoiser den(data, sched), den_p(permuted, sched);
  Rng rng(11);
  std::vector<SemanticGraph> a, b;
  for (int i = 0; i < 10000; ++i) {
    a.push_back(permute_graph(reverse_sample(den, nullptr, {}, sched, 2, rng), perm));
    b.push_back(reverse_sample(den_p, nullptr, {}, sched, 2, rng));
  }
  EXPECT_LE(tv_distance(histogram(a), histogram(b)), 0.05);
}

TEST(ReverseSample, AblationKernelsProduceCleanGraphs) {
  auto data = four_graphs();
  for (KernelKind kernel : {KernelKind::kUniform, KernelKind::kJointMask, KernelKind::kGaussianEmbedding}) {
    const auto sched = build_graph_schedule(20, kVocab, kernel);
    const EmpiricalDenoiser den(data, sched);
    Rng rng(12);
    for (int i = 0; i < 200; ++i) {
      auto g = reverse_sample(den, nullptr, {}, sched, 2, rng);
      ASSERT_FALSE(g.has_mask()) << kernel_name(kernel);
      g = enforce_empty_convention(std::move(g));
      validate_clean_graph(g);
    }
  }
}

TEST(ReverseSample, JointMaskKernelRecoversDistribution) {
  const auto data = four_graphs();
  const auto sched = build_graph_schedule(20, kVocab, KernelKind::kJointMask);
  const EmpiricalDenoiser den(data, sched);
  EXPECT_LE(tv_distance(sample_histogram(den, nullptr, sched, 2, 10000, 13), histogram(data)), 0.05);
}

TEST(ForwardGraph, JointMaskMasksWholeNodes) {
  const auto data = four_graphs();
  const auto sched = build_graph_schedule(10, kVocab, KernelKind::kJointMask);
  Rng rng(14);
  for (int i = 0; i < 500; ++i) {
    const auto g = forward_sample_graph(data[0], rng.integer(1, 9), sched, rng);
    for (std::size_t e = 0; e < g.entry_count(); ++e)
      ASSERT_EQ(g.is_mask(e), g.is_mask(g.category_entry(g.owner_node(e))));
  }
}

TEST(VariationalBound, ZeroForExactSingleGraphDenoiser) {
  const std::vector<SemanticGraph> data{four_graphs()[0]};
  const auto sched = build_graph_schedule(10, kVocab, KernelKind::kIndependentMask, {0.0, false});
  const EmpiricalDenoiser den(data, sched);
  Rng rng(15);
  const auto vb = variational_bound(den, data[0], nullptr, sched, {}, rng, 5);
  EXPECT_LE(vb.total, 1e-9);
  EXPECT_GE(vb.total, 0.0);
}

TEST(VariationalBound, UniformDenoiserIsWorse) {
  const auto all = four_graphs();
  const auto sched = build_graph_schedule(10, kVocab, KernelKind::kIndependentMask);
  for (std::size_t a = 0; a < all.size(); ++a)
    for (std::size_t b = a + 1; b < all.size(); ++b) {
      const std::vector<SemanticGraph> data{all[a], all[b]};
      const EmpiricalDenoiser exact(data, sched);
      const UniformDenoiser uniform;
      double e = 0.0, u = 0.0;
      for (std::size_t i = 0; i < 2; ++i) {
        Rng r1(16 + i), r2(16 + i);
        e += variational_bound(exact, data[i], nullptr, sched, {}, r1, 4).total;
        u += variational_bound(uniform, data[i], nullptr, sched, {}, r2, 4).total;
      }
      EXPECT_GT(u, e);
      EXPECT_GT(u, 0.0);
    }
}

TEST(VariationalBound, ZeroWeightsKeepCategoryTerm) {
  const auto data = four_graphs();
  const auto sched = build_graph_schedule(10, kVocab, KernelKind::kIndependentMask);
  const UniformDenoiser uniform;
  Rng rng(17);
  const auto vb = variational_bound(uniform, data[0], nullptr, sched, {0.0, 0.0}, rng, 2);
  EXPECT_GT(vb.code, 0.0);
  EXPECT_EQ(vb.total, vb.category);
}
