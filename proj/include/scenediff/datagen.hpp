#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "scenediff/feature_quantizer.hpp"
#include "scenediff/instruction.hpp"
#include "scenediff/layout_diffusion.hpp"
#include "scenediff/relation_rules.hpp"
#include "scenediff/scene_model.hpp"

namespace scenediff {

struct LibraryEntry {
  std::string asset;
  int category = 0;
  std::vector<double> feature;
  bool operator==(const LibraryEntry&) const = default;
};

/// Retrievable assets; entries are kept sorted by asset id.
struct ObjectLibrary {
  std::vector<LibraryEntry> entries;
  bool operator==(const ObjectLibrary&) const = default;
};

struct DatasetBundle {
  SceneConfig config;
  std::uint64_t seed = 0;
  std::vector<Scene> scenes;           // canonical object order
  std::vector<SemanticGraph> graphs;   // padded to max_objects
  std::vector<Instruction> instructions;
  Codebook codebook;
  ObjectLibrary library;
  LayoutStats stats;
};

struct DatagenOptions {
  int num_scenes = 200;
  int min_objects = 3;
  int num_styles = 4;
  double feature_noise = 0.05;
  double style_keep = 0.8;           // chance an object follows the room style
  double style_instruction_rate = 0.3;
  double heading_jitter = 0.5;       // radians off the sector axis
  KMeansOptions kmeans{};
};

inline SceneConfig bedroom_config() {
  SceneConfig cfg;
  cfg.category_names = {"bed", "nightstand", "wardrobe", "desk", "chair", "lamp", "dresser", "shelf"};
  cfg.num_categories = static_cast<int>(cfg.category_names.size());
  return cfg;
}

/// Small vocabulary used for the finite-support fixtures.
inline SceneConfig toy_config() {
  SceneConfig cfg;
  cfg.category_names = {"bed", "nightstand", "wardrobe", "lamp"};
  cfg.num_categories = 4;
  cfg.codebook_size = 4;
  cfg.codes_per_object = 2;
  cfg.feature_dim = 4;
  cfg.max_objects = 4;
  return cfg;
}

namespace detail {

inline Vec3 category_size(int c) {
  return {0.4 + 0.3 * (c % 4), 0.4 + 0.25 * ((c + 1) % 3), 0.4 + 0.35 * ((c + 2) % 3)};
}

inline Relation below_or(Relation r) { return r == Relation::kBelow ? Relation::kAbove : r; }

/// Places a new object so that `target` holds between it and `anchor`.
inline void place_relative(ObjectInstance& o, const ObjectInstance& anchor, Relation target, double jitter, Rng& rng) {
  if (target == Relation::kAbove) {
    o.location[0] = anchor.location[0] + rng.uniform(-0.25, 0.25) * anchor.size[0];
    o.location[1] = anchor.location[1] + rng.uniform(-0.25, 0.25) * anchor.size[1];
    o.location[2] = anchor.location[2] + 0.5 * anchor.size[2] + 0.5 * o.size[2] + 0.05;
    return;
  }
  double heading = 0.0, dist = 0.0;
  const int r = static_cast<int>(target);
  if (target == Relation::kNone) {
    heading = rng.uniform(-kPi, kPi);
    dist = rng.uniform(3.5, 5.0);
  } else {
    static constexpr double axis[4] = {kPi, 0.0, kPi / 2, -kPi / 2};  // left, right, front, behind
    heading = axis[r % 4] + rng.uniform(-jitter, jitter);
    dist = r < 4 ? rng.uniform(1.3, 2.7) : rng.uniform(0.4, 0.9);
  }
  o.location[0] = anchor.location[0] + dist * std::cos(heading);
  o.location[1] = anchor.location[1] + dist * std::sin(heading);
  o.location[2] = 0.5 * o.size[2];
}

inline std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

/// One or two distinct triplets drawn from the scene's re-extracted relations,
/// plus an optional category style built from the codes present.
inline Instruction sample_instruction(const Scene& scene, const SemanticGraph& graph, const SceneConfig& cfg,
                                      double style_rate, std::uint64_t seed) {
  Rng rng(seed);
  Instruction in;
  const int n = static_cast<int>(scene.size());
  const int want = n >= 2 ? rng.integer(1, kMaxTriplets) : 0;
  for (int tries = 0; static_cast<int>(in.triplets.size()) < want && tries < 32; ++tries) {
    const int a = static_cast<int>(rng.index(n));
    int b = static_cast<int>(rng.index(n - 1));
    if (b >= a) ++b;
    Triplet t{scene.objects[a].category, relation_between(scene.objects[a], scene.objects[b]),
              scene.objects[b].category};
    if (std::find(in.triplets.begin(), in.triplets.end(), t) == in.triplets.end()) in.triplets.push_back(t);
  }
  if (rng.uniform() < style_rate) {
    const int c = scene.objects[rng.index(n)].category;
    std::vector<int> codes;
    for (int j = 0; j < graph.nodes(); ++j) {
      if (graph.category(j) != c) continue;
      const auto cj = graph.codes(j);
      if (codes.empty()) {
        codes = cj;
      } else {
        for (std::size_t m = 0; m < codes.size(); ++m)
          if (codes[m] != cj[m]) codes[m] = kAnyCode;
      }
    }
    if (std::any_of(codes.begin(), codes.end(), [](int x) { return x != kAnyCode; }))
      in.style = StyleConstraint{c, codes};
  }
  in.text = render_instruction(in, cfg, seed);
  return in;
}

}  // namespace detail

/// Derives graphs, instructions, library and statistics for a set of scenes
/// whose objects carry features, fitting the codebook on those features.
inline DatasetBundle assemble_bundle(const SceneConfig& cfg, std::uint64_t seed, std::vector<Scene> scenes,
                                     double style_rate, KMeansOptions kmeans = {}) {
  cfg.validate();
  DatasetBundle b;
  b.config = cfg;
  b.seed = seed;
  std::vector<std::vector<double>> features;
  for (auto& s : scenes) {
    s = canonicalize(s);
    for (const auto& o : s.objects) features.push_back(o.feature);
  }
  b.codebook = fit_codebook(features, cfg.codebook_size, cfg.codes_per_object, split_seed(seed, 2), kmeans);
  std::size_t asset = 0;
  std::vector<LayoutMatrix> layouts;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (auto& o : scenes[i].objects) {
      o.asset = detail::numbered("asset-", asset++);
      b.library.entries.push_back({o.asset, o.category, o.feature});
    }
    const auto g = derive_semantic_graph(scenes[i], b.codebook, cfg);
    b.graphs.push_back(pad_graph(g, cfg.max_objects));
    b.instructions.push_back(detail::sample_instruction(scenes[i], b.graphs.back(), cfg, style_rate, split_seed(seed, 1000 + i)));
    layouts.push_back(layout_of(scenes[i]));
  }
  b.stats = LayoutStats::compute(layouts);
  b.scenes = std::move(scenes);
  return b;
}

/// Procedural scenes: objects are added one at a time, each placed so that a
/// sampled target relation holds against an earlier object.
inline DatasetBundle generate_dataset(const SceneConfig& cfg, std::uint64_t seed, const DatagenOptions& opt = {}) {
  cfg.validate();
  require(cfg.max_objects >= opt.min_objects && opt.min_objects >= 1,
          "generate_dataset: max_objects must be at least min_objects");
  require(opt.num_scenes >= 1 && opt.num_styles >= 1, "generate_dataset: need at least one scene and style");

  Rng mean_rng(split_seed(seed, 1));
  std::vector<std::vector<std::vector<double>>> means(cfg.num_categories);
  for (auto& per_cat : means) {
    per_cat.resize(opt.num_styles);
    for (auto& m : per_cat) {
      m.resize(cfg.feature_dim);
      for (double& v : m) v = mean_rng.normal();
    }
  }

  Rng rng(split_seed(seed, 3));
  std::vector<Scene> scenes;
  for (int i = 0; i < opt.num_scenes; ++i) {
    Scene s{detail::numbered("scene-", i), {}};
    const int n = rng.integer(opt.min_objects, cfg.max_objects);
    const int room_style = rng.integer(0, opt.num_styles - 1);
    for (int j = 0; j < n; ++j) {
      ObjectInstance o;
      o.id = "o" + std::to_string(j);
      o.category = rng.integer(0, cfg.num_categories - 1);
      o.size = detail::category_size(o.category);
      for (double& v : o.size) v *= rng.uniform(0.9, 1.1);
      o.rotation = wrap_angle(kPi / 2 * rng.integer(0, 3) + rng.uniform(-0.1, 0.1));
      if (j == 0) {
        o.location = {0.0, 0.0, 0.5 * o.size[2]};
      } else {
        const auto& anchor = s.objects[rng.index(s.objects.size())];
        const auto target = detail::below_or(static_cast<Relation>(rng.integer(0, kNumRelations - 1)));
        detail::place_relative(o, anchor, target, opt.heading_jitter, rng);
      }
      const int style = rng.uniform() < opt.style_keep ? room_style : rng.integer(0, opt.num_styles - 1);
      o.feature = means[o.category][style];
      for (double& v : o.feature) v += opt.feature_noise * rng.normal();
      s.objects.push_back(std::move(o));
    }
    scenes.push_back(std::move(s));
  }
  return assemble_bundle(cfg, seed, std::move(scenes), opt.style_instruction_rate, opt.kmeans);
}

/// Finite-support fixture: at most 20 distinct padded graphs, each repeated
/// 1 to 4 times with small layout jitter that leaves the graph unchanged.
inline DatasetBundle toy_support(const SceneConfig& cfg, std::uint64_t seed, int templates = 14) {
  cfg.validate();
  require(templates >= 1 && templates <= 20, "toy_support: template count must lie in [1, 20]");
  require(cfg.max_objects >= 2, "toy_support: need max_objects >= 2");
  constexpr int kStyles = 2;
  Rng rng(split_seed(seed, 11));
  std::vector<std::vector<std::vector<double>>> means(cfg.num_categories, std::vector<std::vector<double>>(kStyles));
  for (auto& per_cat : means)
    for (auto& m : per_cat) {
      m.resize(cfg.feature_dim);
      for (double& v : m) v = 2.0 * rng.normal();
    }
  static constexpr Relation pool[] = {Relation::kLeftOf,          Relation::kRightOf,  Relation::kInFrontOf,
                                      Relation::kCloselyLeftOf,  Relation::kBehind,   Relation::kCloselyInFrontOf,
                                      Relation::kAbove,          Relation::kNone};

  std::vector<Scene> bases;
  for (int i = 0; i < templates; ++i) {
    Scene s{detail::numbered("toy-", i), {}};
    const int n = rng.integer(2, std::min(cfg.max_objects, 4));
    const int style = rng.integer(0, kStyles - 1);
    for (int j = 0; j < n; ++j) {
      ObjectInstance o;
      o.id = "o" + std::to_string(j);
      o.category = rng.integer(0, cfg.num_categories - 1);
      o.size = detail::category_size(o.category);
      o.rotation = wrap_angle(kPi / 2 * rng.integer(0, 3));
      if (j == 0) {
        o.location = {0.0, 0.0, 0.5 * o.size[2]};
      } else {
        const auto& anchor = s.objects[rng.index(s.objects.size())];
        detail::place_relative(o, anchor, pool[rng.index(std::size(pool))], 0.2, rng);
      }
      o.feature = means[o.category][style];
      s.objects.push_back(std::move(o));
    }
    bases.push_back(canonicalize(s));
  }

  // the codebook only depends on the template features, so graphs can be
  // derived before the copies are made
  std::vector<std::vector<double>> features;
  for (const auto& s : bases)
    for (const auto& o : s.objects) features.push_back(o.feature);
  const Codebook cb = fit_codebook(features, cfg.codebook_size, cfg.codes_per_object, split_seed(seed, 2));

  std::vector<Scene> scenes;
  std::set<std::string> seen;
  for (const auto& base : bases) {
    const SemanticGraph g = pad_graph(derive_semantic_graph(base, cb, cfg), cfg.max_objects);
    if (!seen.insert(g.key()).second) continue;
    const int copies = rng.integer(1, 4);
    for (int c = 0; c < copies; ++c) {
      Scene s = base;
      s.id = base.id + "-" + std::to_string(c);
      for (int tries = 0; c > 0 && tries < 20; ++tries) {
        Scene cand = base;
        cand.id = s.id;
        for (auto& o : cand.objects)
          for (int a = 0; a < 2; ++a) o.location[a] += rng.uniform(-0.04, 0.04);
        cand = canonicalize(cand);
        if (pad_graph(derive_semantic_graph(cand, cb, cfg), cfg.max_objects) == g) {
          s = std::move(cand);
          break;
        }
      }
      scenes.push_back(std::move(s));
    }
  }
  return assemble_bundle(cfg, seed, std::move(scenes), 0.3);
}

/// Probability of every distinct graph in the bundle.
inline std::map<std::string, double> graph_distribution(const DatasetBundle& b) {
  std::map<std::string, double> h;
  for (const auto& g : b.graphs) h[g.key()] += 1.0 / static_cast<double>(b.graphs.size());
  return h;
}

/// Triplets realized in at least `min_graphs` distinct graphs, in a
/// deterministic order (most widely realized first).
inline std::vector<Triplet> frequent_triplets(const DatasetBundle& b, int min_graphs = 2) {
  std::map<std::string, const SemanticGraph*> distinct;
  for (const auto& g : b.graphs) distinct.emplace(g.key(), &g);
  std::vector<std::pair<int, Triplet>> found;
  for (int s = 0; s < b.config.num_categories; ++s)
    for (int r = 0; r < kNumRelations; ++r)
      for (int o = 0; o < b.config.num_categories; ++o) {
        const Triplet t{s, static_cast<Relation>(r), o};
        int count = 0;
        for (const auto& [key, g] : distinct) count += triplet_realized(*g, t) ? 1 : 0;
        if (count >= min_graphs) found.push_back({count, t});
      }
  std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<Triplet> out;
  for (const auto& [c, t] : found) out.push_back(t);
  return out;
}

/// Checks the bundle invariants: graphs re-derive from scenes, instructions
/// match their graphs, statistics recompute.
inline void validate_bundle(const DatasetBundle& b) {
  b.config.validate();
  require(b.scenes.size() == b.graphs.size() && b.scenes.size() == b.instructions.size(),
          "bundle: scenes, graphs and instructions differ in length");
  require(!b.scenes.empty(), "bundle: no scenes");
  std::vector<LayoutMatrix> layouts;
  for (std::size_t i = 0; i < b.scenes.size(); ++i) {
    const auto g = pad_graph(derive_semantic_graph(b.scenes[i], b.codebook, b.config), b.config.max_objects);
    require(g == b.graphs[i], "bundle: stored graph differs from re-derivation for " + b.scenes[i].id);
    require(instruction_matches(g, b.instructions[i]), "bundle: instruction does not match scene " + b.scenes[i].id);
    layouts.push_back(layout_of(b.scenes[i]));
  }
  const auto st = LayoutStats::compute(layouts);
  for (int c = 0; c < kLayoutColumns; ++c)
    require(std::abs(st.mean[c] - b.stats.mean[c]) <= 1e-12 && std::abs(st.stddev[c] - b.stats.stddev[c]) <= 1e-12,
            "bundle: layout statistics do not match recomputation");
}

}  // namespace scenediff
