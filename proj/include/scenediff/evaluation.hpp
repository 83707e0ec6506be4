#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scenediff/feature_quantizer.hpp"
#include "scenediff/instruction.hpp"
#include "scenediff/relation_rules.hpp"
#include "scenediff/scene_model.hpp"

namespace scenediff {

/// True if some ordered pair of distinct objects with the triplet's categories
/// has the triplet's relation, re-extracted from geometry.
inline bool triplet_in_scene(const Scene& scene, const Triplet& t, const RelationThresholds& th = {}) {
  for (std::size_t a = 0; a < scene.size(); ++a) {
    if (scene.objects[a].category != t.subject) continue;
    for (std::size_t b = 0; b < scene.size(); ++b) {
      if (a == b || scene.objects[b].category != t.object) continue;
      if (relation_between(scene.objects[a], scene.objects[b], th) == t.relation) return true;
    }
  }
  return false;
}

struct RecallCount {
  std::size_t satisfied = 0;
  std::size_t required = 0;
  double value() const { return static_cast<double>(satisfied) / static_cast<double>(required); }
};

/// Satisfied / required triplets over a batch of (scene, instruction) pairs.
inline RecallCount irecall_count(std::span<const Scene> scenes, std::span<const Instruction> instructions,
                                 const RelationThresholds& th = {}) {
  require(scenes.size() == instructions.size(), "irecall: scenes and instructions differ in length");
  RecallCount c;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    for (const auto& t : instructions[i].triplets) {
      ++c.required;
      if (triplet_in_scene(scenes[i], t, th)) ++c.satisfied;
    }
  require(c.required > 0, "irecall: no required triplets");
  return c;
}

inline double irecall(std::span<const Scene> scenes, std::span<const Instruction> instructions,
                      const RelationThresholds& th = {}) {
  return irecall_count(scenes, instructions, th).value();
}

using Histogram = std::map<std::string, double>;

/// Empirical distribution of graph keys.
inline Histogram histogram(std::span<const SemanticGraph> graphs) {
  require(!graphs.empty(), "histogram: no graphs");
  Histogram h;
  for (const auto& g : graphs) h[g.key()] += 1.0;
  for (auto& [k, v] : h) v /= static_cast<double>(graphs.size());
  return h;
}

/// 1/2 sum |p - q| over the union of supports.
inline double tv_distance(const Histogram& p, const Histogram& q) {
  double sum = 0.0;
  for (const auto& [k, v] : p) {
    auto it = q.find(k);
    sum += std::abs(v - (it == q.end() ? 0.0 : it->second));
  }
  for (const auto& [k, v] : q)
    if (!p.count(k)) sum += v;
  return 0.5 * sum;
}

inline double tv_distance(std::span<const SemanticGraph> samples, const Histogram& reference) {
  require(!samples.empty(), "tv_distance: no samples");
  return tv_distance(histogram(samples), reference);
}

/// Fraction of objects whose code sequence matches the style signature. When
/// the style names a category only objects of that category are counted.
/// This is a code-level stand-in for an embedding similarity score.
inline double style_match_rate(std::span<const Scene> scenes, const StyleConstraint& style, const Codebook& codebook) {
  std::size_t total = 0, matched = 0;
  for (const auto& s : scenes)
    for (const auto& o : s.objects) {
      if (style.category && o.category != *style.category) continue;
      ++total;
      const auto codes = object_codes(o, codebook);
      if (style.matches(codes)) ++matched;
    }
  require(total > 0, "style_match_rate: no objects to score");
  return static_cast<double>(matched) / static_cast<double>(total);
}

struct EvalReport {
  std::optional<double> irecall;
  std::optional<double> tv;
  std::optional<double> style_match;
  std::size_t scenes = 0;
  std::size_t required_triplets = 0;
  std::size_t satisfied_triplets = 0;
  std::string config_fingerprint;
};

}  // namespace scenediff
