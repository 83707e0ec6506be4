#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "scenediff/datagen.hpp"
#include "scenediff/graph_diffusion.hpp"
#include "scenediff/layout_diffusion.hpp"

namespace scenediff {

struct GenerationConfig {
  int t_graph = 100;
  int t_layout = 10;
  KernelKind kernel = KernelKind::kIndependentMask;
  ScheduleOptions schedule{};
  GuidanceConfig guidance{};
  int max_objects = 0;  // 0: use the dataset's padded size
  std::uint64_t seed = 0;

  void validate() const {
    require(t_graph >= 1 && t_layout >= 1, "GenerationConfig: step counts must be >= 1");
    require(max_objects >= 0, "GenerationConfig: max_objects must be >= 0");
    guidance.validate();
  }
};

/// Asset whose feature is closest to decode(codes) among entries of the
/// category; ties go to the lowest asset id.
inline std::string retrieve_object(int category, std::span<const int> codes, const Codebook& codebook,
                                   const ObjectLibrary& library) {
  const auto target = codebook.decode(codes);
  const LibraryEntry* best = nullptr;
  double best_d = 0.0;
  for (const auto& e : library.entries) {
    if (e.category != category) continue;
    require(e.feature.size() == target.size(), "retrieve_object: library feature dimension mismatch");
    const double d = Codebook::squared_distance(e.feature, target);
    if (!best || d < best_d || (d == best_d && e.asset < best->asset)) {
      best = &e;
      best_d = d;
    }
  }
  if (!best) throw Unsatisfiable("object retrieval", "object library has no entry for category " + std::to_string(category));
  return best->asset;
}

/// Two-stage sampler over one dataset bundle: a semantic graph from the
/// discrete prior, then a layout from the Gaussian decoder, then assets.
/// The zero-shot tasks freeze the known parts of the graph and layout.
class Synthesizer {
 public:
  Synthesizer(const DatasetBundle& bundle, GenerationConfig cfg)
      : cfg_(std::move(cfg)), config_(bundle.config), codebook_(bundle.codebook), library_(bundle.library),
        stats_(bundle.stats),
        graph_(bundle.graphs, build_graph_schedule(cfg_.t_graph, GraphVocab::from(bundle.config), cfg_.kernel,
                                                   cfg_.schedule)),
        layout_(layout_examples(bundle), build_gaussian_schedule(cfg_.t_layout)) {
    cfg_.validate();
    require(cfg_.max_objects == 0 || cfg_.max_objects == bundle.config.max_objects,
            "GenerationConfig: max_objects must match the dataset's padded size");
  }

  const EmpiricalDenoiser& graph_denoiser() const noexcept { return graph_; }
  const ExactEpsDenoiser& layout_denoiser() const noexcept { return layout_; }
  ExactEpsDenoiser& layout_denoiser() noexcept { return layout_; }
  const SceneConfig& config() const noexcept { return config_; }
  const GenerationConfig& generation() const noexcept { return cfg_; }
  int slots() const noexcept { return config_.max_objects; }

  SemanticGraph sample_graph(const Instruction* instr, Rng& rng, const FrozenEntries* frozen = nullptr) const {
    SemanticGraph g = reverse_sample(graph_, instr, cfg_.guidance, graph_.schedule(), slots(), rng, frozen);
    if (!is_mask_kernel(cfg_.kernel)) g = enforce_empty_convention(std::move(g));
    return g;
  }

  Scene generate(const Instruction& instr, Rng& rng) const {
    validate_instruction(instr, config_);
    const SemanticGraph g = sample_graph(&instr, rng);
    std::vector<int> kept;
    const SemanticGraph compact = compact_graph(g, &kept);
    require(compact.nodes() >= 1, "generate: sampled graph has no objects");
    const LayoutMatrix L = reverse_sample_layout(layout_, compact, layout_.schedule(), stats_, rng);
    Scene out{"generated", {}};
    for (int a = 0; a < compact.nodes(); ++a) out.objects.push_back(make_object(compact, a, L, "o" + std::to_string(a)));
    return out;
  }

  Scene unconditional(Rng& rng) const { return generate(Instruction{}, rng); }

  /// Adds objects to `partial`. Existing objects are frozen in the graph and
  /// the layout and returned unchanged, first and in their input order.
  Scene complete(const Scene& partial, const Instruction& instr, Rng& rng) const {
    validate_instruction(instr, config_);
    if (partial.objects.empty()) return generate(instr, rng);
    validate_scene(partial, config_);
    const int n = static_cast<int>(partial.size());
    const SemanticGraph derived = derive_semantic_graph(canonicalize(partial), codebook_, config_);

    // existing objects keep their canonical order but may sit in any slots
    std::vector<std::vector<int>> placements;
    std::vector<int> pick(slots(), 0);
    std::fill(pick.begin(), pick.begin() + n, 1);
    do {
      std::vector<int> slot;
      for (int s = 0; s < slots(); ++s)
        if (pick[s]) slot.push_back(s);
      placements.push_back(std::move(slot));
    } while (std::prev_permutation(pick.begin(), pick.end()));

    const auto frozen_for = [&](const std::vector<int>& slot) {
      FrozenEntries f = empty_frozen();
      for (int a = 0; a < n; ++a) {
        freeze(f, f.values.category_entry(slot[a]), derived.category(a));
        for (int m = 0; m < config_.codes_per_object; ++m)
          freeze(f, f.values.code_entry(slot[a], m), derived.code(a, m));
        for (int b = a + 1; b < n; ++b) freeze(f, f.values.relation_entry(slot[a], slot[b]), derived.relation(a, b));
      }
      return f;
    };
    const FrozenEntries frozen =
        best_alignment(placements, frozen_for, &instr, n == slots() ? "completion capacity" : "completion frozen-entry filter");
    const SemanticGraph g = sample_graph(&instr, rng, &frozen);

    std::vector<int> kept;
    const SemanticGraph compact = compact_graph(g, &kept);
    FrozenRows rows{std::vector<bool>(compact.nodes(), false), LayoutMatrix::Zero(compact.nodes(), kLayoutColumns)};
    const LayoutMatrix known = stats_.standardize(layout_of(canonicalize(partial)));
    for (int r = 0; r < n; ++r) {
      const int a = static_cast<int>(std::find(kept.begin(), kept.end(), slot_of(frozen, r)) - kept.begin());
      rows.frozen[a] = true;
      rows.values.row(a) = known.row(r);
    }
    const LayoutMatrix L = reverse_sample_layout(layout_, compact, layout_.schedule(), stats_, rng, &rows);

    Scene out{partial.id, partial.objects};
    int fresh = 0;
    for (int a = 0; a < compact.nodes(); ++a) {
      if (rows.frozen[a]) continue;
      std::string id;
      do id = "new" + std::to_string(fresh++);
      while (std::any_of(partial.objects.begin(), partial.objects.end(), [&](const auto& o) { return o.id == id; }));
      out.objects.push_back(make_object(compact, a, L, id));
    }
    return out;
  }

  /// Resamples relations and layout with categories and codes frozen; assets,
  /// ids and object order are kept.
  Scene rearrange(const Scene& scene, const Instruction& instr, Rng& rng) const {
    validate_instruction(instr, config_);
    validate_scene(scene, config_);
    const auto frozen_for = [&](const std::vector<int>& perm) {
      const SemanticGraph d = node_graph(scene, perm);
      FrozenEntries f = empty_frozen();
      for (int j = 0; j < slots(); ++j) {
        freeze(f, f.values.category_entry(j), d.category(j));
        for (int m = 0; m < config_.codes_per_object; ++m) freeze(f, f.values.code_entry(j, m), d.code(j, m));
        for (int k = j + 1; k < slots(); ++k)
          if (d.is_empty_node(j) || d.is_empty_node(k)) freeze(f, f.values.relation_entry(j, k), d.relation(j, k));
      }
      return f;
    };
    const auto perms = category_orders(scene);
    std::size_t chosen = 0;
    const FrozenEntries frozen = best_alignment(perms, frozen_for, &instr, "rearrange frozen-entry filter", &chosen);
    const std::vector<int>& perm = perms[chosen];
    const SemanticGraph g = sample_graph(&instr, rng, &frozen);
    const SemanticGraph compact = compact_graph(g);
    const LayoutMatrix L = reverse_sample_layout(layout_, compact, layout_.schedule(), stats_, rng);

    Scene out = scene;
    for (int a = 0; a < compact.nodes(); ++a) {
      ObjectInstance& o = out.objects[perm[a]];
      set_layout(o, L, a);
    }
    return out;
  }

  /// Resamples codes only; layout, categories and relations are frozen and
  /// assets are re-retrieved from the new codes.
  Scene stylize(const Scene& scene, const Instruction& instr, Rng& rng) const {
    validate_instruction(instr, config_);
    validate_scene(scene, config_);
    const auto frozen_for = [&](const std::vector<int>& perm) {
      const SemanticGraph d = node_graph(scene, perm);
      FrozenEntries f = empty_frozen();
      for (int j = 0; j < slots(); ++j) {
        freeze(f, f.values.category_entry(j), d.category(j));
        if (d.is_empty_node(j))
          for (int m = 0; m < config_.codes_per_object; ++m) freeze(f, f.values.code_entry(j, m), d.code(j, m));
        for (int k = j + 1; k < slots(); ++k) freeze(f, f.values.relation_entry(j, k), d.relation(j, k));
      }
      return f;
    };
    const auto perms = category_orders(scene);
    std::size_t chosen = 0;
    const FrozenEntries frozen = best_alignment(perms, frozen_for, &instr, "stylize frozen-entry filter", &chosen);
    const std::vector<int>& perm = perms[chosen];
    const SemanticGraph g = sample_graph(&instr, rng, &frozen);

    Scene out = scene;
    for (int j = 0; j < static_cast<int>(scene.size()); ++j) {
      ObjectInstance& o = out.objects[perm[j]];
      o.codes = g.codes(j);
      o.asset = retrieve_object(o.category, o.codes, codebook_, library_);
      o.feature = library_feature(o.asset);
    }
    return out;
  }

 private:
  static std::vector<LayoutExample> layout_examples(const DatasetBundle& b) {
    std::vector<LayoutExample> out;
    for (std::size_t i = 0; i < b.scenes.size(); ++i)
      out.push_back({compact_graph(b.graphs[i]), b.stats.standardize(layout_of(b.scenes[i]))});
    return out;
  }

  FrozenEntries empty_frozen() const {
    SemanticGraph g(GraphVocab::from(config_), slots());
    return {g, std::vector<bool>(g.entry_count(), false)};
  }

  static void freeze(FrozenEntries& f, std::size_t e, int v) {
    f.values.set_value(e, v);
    f.frozen[e] = true;
  }

  // slot holding the r-th frozen real node (frozen categories are listed in slot order)
  static int slot_of(const FrozenEntries& f, int r) {
    for (int j = 0; j < f.values.nodes(); ++j)
      if (f.frozen[f.values.category_entry(j)] && r-- == 0) return j;
    return -1;
  }

  /// Padded graph of `scene` with object perm[j] in slot j.
  SemanticGraph node_graph(const Scene& scene, const std::vector<int>& perm) const {
    Scene ordered{scene.id, {}};
    for (int i : perm) ordered.objects.push_back(scene.objects[i]);
    return pad_graph(derive_semantic_graph(ordered, codebook_, config_), slots());
  }

  /// Object orders sorted by category, with every arrangement of objects
  /// sharing a category (dataset graphs list nodes by category first).
  static std::vector<std::vector<int>> category_orders(const Scene& scene) {
    std::vector<int> base(scene.size());
    std::iota(base.begin(), base.end(), 0);
    std::stable_sort(base.begin(), base.end(),
                     [&](int a, int b) { return scene.objects[a].category < scene.objects[b].category; });
    std::vector<std::vector<int>> out{base};
    for (std::size_t lo = 0; lo < base.size();) {
      std::size_t hi = lo;
      while (hi < base.size() && scene.objects[base[hi]].category == scene.objects[base[lo]].category) ++hi;
      std::vector<std::vector<int>> next;
      for (const auto& p : out) {
        std::vector<int> q = p;
        std::sort(q.begin() + lo, q.begin() + hi);
        do next.push_back(q);
        while (std::next_permutation(q.begin() + lo, q.begin() + hi) && next.size() < 5040);
      }
      out = std::move(next);
      lo = hi;
    }
    return out;
  }

  /// The candidate freeze whose exact dataset evidence is largest (first on ties).
  template <class Candidate, class Make>
  FrozenEntries best_alignment(const std::vector<Candidate>& candidates, Make&& make, const Instruction* instr,
                               const char* stage, std::size_t* chosen = nullptr) const {
    double best = 0.0;
    std::size_t best_i = 0;
    std::optional<FrozenEntries> out;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      FrozenEntries f = make(candidates[i]);
      const double ev = graph_.evidence(f, instr);
      if (ev > best) {
        best = ev;
        best_i = i;
        out = std::move(f);
      }
    }
    if (!out) throw Unsatisfiable(stage, std::string("no dataset graph agrees with the frozen attributes") +
                                             (is_conditional(instr) ? " and the instruction" : ""));
    if (chosen) *chosen = best_i;
    return *out;
  }

  const std::vector<double>& library_feature(const std::string& asset) const {
    for (const auto& e : library_.entries)
      if (e.asset == asset) return e.feature;
    throw InvalidArgument("unknown asset " + asset);
  }

  static void set_layout(ObjectInstance& o, const LayoutMatrix& L, int row) {
    for (int c = 0; c < 3; ++c) o.location[c] = L(row, c);
    for (int c = 0; c < 3; ++c) o.size[c] = std::max(L(row, 3 + c), 1e-3);
    o.rotation = rotation_decode(L(row, 6), L(row, 7));
  }

  ObjectInstance make_object(const SemanticGraph& compact, int row, const LayoutMatrix& L, std::string id) const {
    ObjectInstance o;
    o.id = std::move(id);
    o.category = compact.category(row);
    o.codes = compact.codes(row);
    o.asset = retrieve_object(o.category, o.codes, codebook_, library_);
    o.feature = library_feature(o.asset);
    set_layout(o, L, row);
    return o;
  }

  GenerationConfig cfg_;
  SceneConfig config_;
  Codebook codebook_;
  ObjectLibrary library_;
  LayoutStats stats_;
  EmpiricalDenoiser graph_;
  ExactEpsDenoiser layout_;
};

inline Scene generate(const Instruction& instr, const DatasetBundle& bundle, const GenerationConfig& cfg, Rng& rng) {
  return Synthesizer(bundle, cfg).generate(instr, rng);
}

inline Scene complete(const Scene& partial, const Instruction& instr, const DatasetBundle& bundle,
                      const GenerationConfig& cfg, Rng& rng) {
  return Synthesizer(bundle, cfg).complete(partial, instr, rng);
}

inline Scene rearrange(const Scene& scene, const Instruction& instr, const DatasetBundle& bundle,
                       const GenerationConfig& cfg, Rng& rng) {
  return Synthesizer(bundle, cfg).rearrange(scene, instr, rng);
}

inline Scene stylize(const Scene& scene, const Instruction& instr, const DatasetBundle& bundle,
                     const GenerationConfig& cfg, Rng& rng) {
  return Synthesizer(bundle, cfg).stylize(scene, instr, rng);
}

inline Scene unconditional(const DatasetBundle& bundle, const GenerationConfig& cfg, Rng& rng) {
  return Synthesizer(bundle, cfg).unconditional(rng);
}

}  // namespace scenediff
