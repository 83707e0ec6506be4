#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scenediff/object.hpp"

namespace scenediff {

/// The eleven view-dependent spatial relations. Values are the 0-based
/// relation states used by the semantic graph.
enum class Relation : int {
  kLeftOf = 0,
  kRightOf,
  kInFrontOf,
  kBehind,
  kCloselyLeftOf,
  kCloselyRightOf,
  kCloselyInFrontOf,
  kCloselyBehind,
  kAbove,
  kBelow,
  kNone,
};

inline constexpr std::array<std::string_view, kNumRelations> kRelationNames{
    "left of",          "right of",          "in front of", "behind",
    "closely left of",  "closely right of",  "closely in front of",
    "closely behind",   "above",             "below",       "none",
};

inline std::string_view relation_name(Relation r) { return kRelationNames.at(static_cast<int>(r)); }

inline std::optional<Relation> relation_from_name(std::string_view name) {
  for (int i = 0; i < kNumRelations; ++i)
    if (kRelationNames[i] == name) return static_cast<Relation>(i);
  return std::nullopt;
}

inline Relation inverse_relation(Relation r) {
  switch (r) {
    case Relation::kLeftOf: return Relation::kRightOf;
    case Relation::kRightOf: return Relation::kLeftOf;
    case Relation::kInFrontOf: return Relation::kBehind;
    case Relation::kBehind: return Relation::kInFrontOf;
    case Relation::kCloselyLeftOf: return Relation::kCloselyRightOf;
    case Relation::kCloselyRightOf: return Relation::kCloselyLeftOf;
    case Relation::kCloselyInFrontOf: return Relation::kCloselyBehind;
    case Relation::kCloselyBehind: return Relation::kCloselyInFrontOf;
    case Relation::kAbove: return Relation::kBelow;
    case Relation::kBelow: return Relation::kAbove;
    case Relation::kNone: return Relation::kNone;
  }
  return Relation::kNone;
}

struct RelationThresholds {
  double close = 1.0;  // d <= close  -> closely-*
  double far = 3.0;    // d >  far    -> none
};

namespace detail {

/// Subject center inside the object's axis-aligned ground footprint (closed box).
inline bool center_inside(const ObjectInstance& subject, const ObjectInstance& object) {
  return std::abs(subject.location[0] - object.location[0]) <= 0.5 * object.size[0] &&
         std::abs(subject.location[1] - object.location[1]) <= 0.5 * object.size[1];
}

// Sector index: 0 left, 1 right, 2 in front, 3 behind. Half-open bounds are
// taken verbatim from the rule table.
inline int direction_sector(double theta) {
  constexpr double q = kPi / 4.0;
  if (theta >= 3.0 * q || theta < -3.0 * q) return 0;
  if (theta >= -q && theta < q) return 1;
  if (theta >= q && theta < 3.0 * q) return 2;
  return 3;
}

}  // namespace detail

/// Spatial relation of `subject` with respect to `object`. Above/below take
/// precedence, then `none` for distant pairs, then the ground-plane sectors.
inline Relation relation_between(const ObjectInstance& subject, const ObjectInstance& object,
                                 const RelationThresholds& th = {}) {
  const double dx = subject.location[0] - object.location[0];
  const double dy = subject.location[1] - object.location[1];
  const double dz = subject.location[2] - object.location[2];
  const double half_heights = 0.5 * (subject.size[2] + object.size[2]);
  const bool overlapping = detail::center_inside(subject, object) || detail::center_inside(object, subject);

  if (overlapping && dz > half_heights) return Relation::kAbove;
  if (overlapping && -dz > half_heights) return Relation::kBelow;

  const double d = std::hypot(dx, dy);
  if (d > th.far) return Relation::kNone;
  // coincident ground centers have no direction
  if (dx == 0.0 && dy == 0.0) return Relation::kNone;

  const int sector = detail::direction_sector(std::atan2(dy, dx));
  const int base = d <= th.close ? static_cast<int>(Relation::kCloselyLeftOf) : 0;
  return static_cast<Relation>(base + sector);
}

/// Upper-triangular relation table of a scene: entry for (j, k), j < k, is
/// stored at index `pair_index(n, j, k)`.
constexpr std::size_t pair_index(std::size_t n, std::size_t j, std::size_t k) {
  return j * n - j * (j + 1) / 2 + (k - j - 1);
}

constexpr std::size_t pair_count(std::size_t n) { return n * (n - (n > 0 ? 1 : 0)) / 2; }

inline std::vector<Relation> extract_relations(const Scene& scene, const RelationThresholds& th = {}) {
  const std::size_t n = scene.objects.size();
  std::vector<Relation> out(pair_count(n));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = j + 1; k < n; ++k)
      out[pair_index(n, j, k)] = relation_between(scene.objects[j], scene.objects[k], th);
  return out;
}

}  // namespace scenediff
