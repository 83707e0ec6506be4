#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "scenediff/feature_quantizer.hpp"
#include "scenediff/object.hpp"
#include "scenediff/relation_rules.hpp"

namespace scenediff {

/// The three categorical variable kinds of a semantic graph.
enum class VarKind { kCategory = 0, kCode = 1, kRelation = 2 };

inline constexpr std::array<VarKind, 3> kVarKinds{VarKind::kCategory, VarKind::kCode, VarKind::kRelation};

inline const char* var_kind_name(VarKind k) {
  switch (k) {
    case VarKind::kCategory: return "category";
    case VarKind::kCode: return "code";
    case VarKind::kRelation: return "relation";
  }
  return "?";
}

/// Vocabulary sizes of a semantic graph. Each variable kind with K real
/// values has two extra states: empty (= K) and mask (= K + 1).
struct GraphVocab {
  int num_categories = 1;
  int codebook_size = 1;
  int codes_per_node = 1;

  int real_states(VarKind k) const {
    switch (k) {
      case VarKind::kCategory: return num_categories;
      case VarKind::kCode: return codebook_size;
      case VarKind::kRelation: return kNumRelations;
    }
    return 0;
  }
  int states(VarKind k) const { return real_states(k) + 2; }
  int empty(VarKind k) const { return real_states(k); }
  int mask(VarKind k) const { return real_states(k) + 1; }

  static GraphVocab from(const SceneConfig& cfg) {
    return {cfg.num_categories, cfg.codebook_size, cfg.codes_per_object};
  }
  bool operator==(const GraphVocab&) const = default;
};

/// Categorical node/edge tensors (C, F, E) stored as one flat array:
/// N categories, then N*n_f codes, then the N(N-1)/2 upper-triangular
/// relations. Every entry holds a state index in [0, K+2).
class SemanticGraph {
 public:
  SemanticGraph() = default;
  SemanticGraph(GraphVocab vocab, int nodes) : vocab_(vocab), nodes_(nodes) {
    require(nodes >= 0, "SemanticGraph: negative node count");
    values_.resize(entry_count());
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] = vocab_.empty(kind(i));
  }

  /// A graph with every entry in the mask state.
  static SemanticGraph all_mask(GraphVocab vocab, int nodes) {
    SemanticGraph g(vocab, nodes);
    for (std::size_t i = 0; i < g.values_.size(); ++i) g.values_[i] = vocab.mask(g.kind(i));
    return g;
  }

  const GraphVocab& vocab() const noexcept { return vocab_; }
  int nodes() const noexcept { return nodes_; }

  std::size_t code_offset() const noexcept { return static_cast<std::size_t>(nodes_); }
  std::size_t relation_offset() const noexcept {
    return code_offset() + static_cast<std::size_t>(nodes_) * vocab_.codes_per_node;
  }
  std::size_t entry_count() const noexcept { return relation_offset() + pair_count(nodes_); }

  VarKind kind(std::size_t entry) const noexcept {
    if (entry < code_offset()) return VarKind::kCategory;
    if (entry < relation_offset()) return VarKind::kCode;
    return VarKind::kRelation;
  }

  std::size_t category_entry(int j) const { return static_cast<std::size_t>(j); }
  std::size_t code_entry(int j, int m) const {
    return code_offset() + static_cast<std::size_t>(j) * vocab_.codes_per_node + m;
  }
  std::size_t relation_entry(int j, int k) const {
    return relation_offset() + pair_index(nodes_, j, k);
  }

  /// Node owning an entry; for relations, the lower-index endpoint.
  int owner_node(std::size_t entry) const {
    if (entry < code_offset()) return static_cast<int>(entry);
    if (entry < relation_offset()) return static_cast<int>((entry - code_offset()) / vocab_.codes_per_node);
    std::size_t r = entry - relation_offset();
    for (int j = 0; j + 1 < nodes_; ++j) {
      const std::size_t row = static_cast<std::size_t>(nodes_ - j - 1);
      if (r < row) return j;
      r -= row;
    }
    return nodes_ - 1;
  }

  int category(int j) const { return values_[category_entry(j)]; }
  int code(int j, int m) const { return values_[code_entry(j, m)]; }
  /// Stored relation state for j < k.
  int relation(int j, int k) const { return values_[relation_entry(j, k)]; }

  void set_category(int j, int v) { values_[category_entry(j)] = v; }
  void set_code(int j, int m, int v) { values_[code_entry(j, m)] = v; }
  void set_relation(int j, int k, int v) { values_[relation_entry(j, k)] = v; }

  std::vector<int> codes(int j) const {
    std::vector<int> out(vocab_.codes_per_node);
    for (int m = 0; m < vocab_.codes_per_node; ++m) out[m] = code(j, m);
    return out;
  }

  /// Relation of j with respect to k for any j != k, reading the stored
  /// triangle and inverting when j > k. Extra states are returned unchanged.
  int directed_relation(int j, int k) const {
    if (j < k) return relation(j, k);
    const int v = relation(k, j);
    return v < kNumRelations ? static_cast<int>(inverse_relation(static_cast<Relation>(v))) : v;
  }

  bool is_empty_node(int j) const { return category(j) == vocab_.empty(VarKind::kCategory); }

  int value(std::size_t entry) const { return values_[entry]; }
  void set_value(std::size_t entry, int v) { values_[entry] = v; }
  std::span<const int> values() const noexcept { return values_; }
  std::span<int> values() noexcept { return values_; }

  bool is_mask(std::size_t entry) const { return values_[entry] == vocab_.mask(kind(entry)); }
  bool has_mask() const {
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (is_mask(i)) return true;
    return false;
  }

  int non_empty_count() const {
    int n = 0;
    for (int j = 0; j < nodes_; ++j) n += is_empty_node(j) ? 0 : 1;
    return n;
  }

  /// Compact textual key, used for hashing graph distributions.
  std::string key() const {
    std::string s;
    s.reserve(values_.size() * 3);
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (i == code_offset() || i == relation_offset()) s += '|';
      s += std::to_string(values_[i]);
      s += ',';
    }
    return s;
  }

  bool operator==(const SemanticGraph&) const = default;

 private:
  GraphVocab vocab_{};
  int nodes_ = 0;
  std::vector<int> values_;
};

/// Checks the clean-graph invariants: all states in range, no mask, and empty
/// nodes carry all-empty codes and incident relations.
inline void validate_clean_graph(const SemanticGraph& g) {
  const auto& v = g.vocab();
  for (std::size_t i = 0; i < g.entry_count(); ++i) {
    const int x = g.value(i);
    require(x >= 0 && x < v.states(g.kind(i)), "graph entry out of range");
    require(x != v.mask(g.kind(i)), "clean graph contains a mask state");
  }
  for (int j = 0; j < g.nodes(); ++j) {
    const bool empty = g.is_empty_node(j);
    for (int m = 0; m < v.codes_per_node; ++m)
      require((g.code(j, m) == v.empty(VarKind::kCode)) == empty,
              "node codes must be empty exactly when the node is empty");
    for (int k = 0; k < g.nodes(); ++k) {
      if (k == j) continue;
      const bool edge_empty = g.directed_relation(j, k) == v.empty(VarKind::kRelation);
      require(edge_empty == (empty || g.is_empty_node(k)),
              "relations must be empty exactly when an endpoint is empty");
    }
  }
}

/// Codes of an object: its stored codes when present, else the quantized feature.
inline std::vector<int> object_codes(const ObjectInstance& o, const Codebook& codebook) {
  if (!o.codes.empty()) {
    require(static_cast<int>(o.codes.size()) == codebook.codes_per_feature(), "object codes have wrong length");
    for (int c : o.codes) require(c >= 0 && c < codebook.size(), "object code out of range");
    return o.codes;
  }
  require(static_cast<int>(o.feature.size()) == codebook.feature_dim(),
          "object feature dimension does not match the codebook");
  return codebook.encode(o.feature);
}

inline SemanticGraph derive_semantic_graph(const Scene& scene, const Codebook& codebook, const SceneConfig& cfg,
                                           const RelationThresholds& th = {}) {
  validate_scene(scene, cfg);
  require(codebook.feature_dim() == cfg.feature_dim && codebook.codes_per_feature() == cfg.codes_per_object &&
              codebook.size() == cfg.codebook_size,
          "codebook does not match the scene config");
  const int n = static_cast<int>(scene.size());
  SemanticGraph g(GraphVocab::from(cfg), n);
  for (int j = 0; j < n; ++j) {
    const auto& o = scene.objects[j];
    g.set_category(j, o.category);
    const auto codes = object_codes(o, codebook);
    for (int m = 0; m < cfg.codes_per_object; ++m) g.set_code(j, m, codes[m]);
  }
  const auto rel = extract_relations(scene, th);
  for (int j = 0; j < n; ++j)
    for (int k = j + 1; k < n; ++k) g.set_relation(j, k, static_cast<int>(rel[pair_index(n, j, k)]));
  return g;
}

/// Appends empty nodes up to `max_nodes`; existing entries are unchanged.
inline SemanticGraph pad_graph(const SemanticGraph& g, int max_nodes) {
  require(g.nodes() <= max_nodes, "pad_graph: graph has more nodes than max_nodes");
  if (g.nodes() == max_nodes) return g;
  SemanticGraph out(g.vocab(), max_nodes);
  for (int j = 0; j < g.nodes(); ++j) {
    out.set_category(j, g.category(j));
    for (int m = 0; m < g.vocab().codes_per_node; ++m) out.set_code(j, m, g.code(j, m));
    for (int k = j + 1; k < g.nodes(); ++k) out.set_relation(j, k, g.relation(j, k));
  }
  return out;
}

inline bool is_permutation_of_slots(std::span<const int> perm, int n) {
  if (static_cast<int>(perm.size()) != n) return false;
  std::vector<char> seen(n, 0);
  for (int p : perm) {
    if (p < 0 || p >= n || seen[p]) return false;
    seen[p] = 1;
  }
  return true;
}

inline std::vector<int> invert_permutation(std::span<const int> perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
  return inv;
}

/// Moves node j to slot perm[j]. Relations are re-stored in the upper
/// triangle, inverted when the endpoint order flips.
inline SemanticGraph permute_graph(const SemanticGraph& g, std::span<const int> perm) {
  require(is_permutation_of_slots(perm, g.nodes()), "permute_graph: perm is not a bijection on the slots");
  SemanticGraph out(g.vocab(), g.nodes());
  for (int j = 0; j < g.nodes(); ++j) {
    out.set_category(perm[j], g.category(j));
    for (int m = 0; m < g.vocab().codes_per_node; ++m) out.set_code(perm[j], m, g.code(j, m));
  }
  for (int j = 0; j < g.nodes(); ++j)
    for (int k = j + 1; k < g.nodes(); ++k) {
      const int a = perm[j], b = perm[k];
      if (a < b) {
        out.set_relation(a, b, g.relation(j, k));
      } else {
        out.set_relation(b, a, g.directed_relation(k, j));
      }
    }
  return out;
}

/// Canonical object order: by (category, t_x, t_y, t_z, id). Returns `order`
/// with order[r] = index of the object ranked r.
inline std::vector<int> canonical_order(const Scene& scene) {
  std::vector<int> order(scene.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& x = scene.objects[a];
    const auto& y = scene.objects[b];
    return std::tie(x.category, x.location[0], x.location[1], x.location[2], x.id) <
           std::tie(y.category, y.location[0], y.location[1], y.location[2], y.id);
  });
  return order;
}

inline Scene canonicalize(const Scene& scene) {
  Scene out{scene.id, {}};
  for (int i : canonical_order(scene)) out.objects.push_back(scene.objects[i]);
  return out;
}

/// Drops empty nodes. `kept` receives the original slot of every retained node.
inline SemanticGraph compact_graph(const SemanticGraph& g, std::vector<int>* kept = nullptr) {
  std::vector<int> slots;
  for (int j = 0; j < g.nodes(); ++j)
    if (!g.is_empty_node(j)) slots.push_back(j);
  SemanticGraph out(g.vocab(), static_cast<int>(slots.size()));
  for (int a = 0; a < out.nodes(); ++a) {
    out.set_category(a, g.category(slots[a]));
    for (int m = 0; m < g.vocab().codes_per_node; ++m) out.set_code(a, m, g.code(slots[a], m));
    for (int b = a + 1; b < out.nodes(); ++b) out.set_relation(a, b, g.relation(slots[a], slots[b]));
  }
  if (kept) *kept = std::move(slots);
  return out;
}

/// Layout row for one object: (t_x, t_y, t_z, s_x, s_y, s_z, cos r, sin r).
inline constexpr int kLayoutColumns = 8;

}  // namespace scenediff
