#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "scenediff/core.hpp"

namespace scenediff {

using Vec3 = std::array<double, 3>;

/// Wraps an angle into [-pi, pi).
inline double wrap_angle(double r) {
  double w = std::fmod(r + kPi, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  double out = w - kPi;
  return out >= kPi ? -kPi : out;
}

/// One furniture item. `size` holds full extents (x, y, z) in meters, axis
/// aligned; `rotation` is the heading about the vertical Z axis.
struct ObjectInstance {
  int category = 0;  // 0-based index into SceneConfig::category_names
  Vec3 location{0.0, 0.0, 0.0};
  Vec3 size{1.0, 1.0, 1.0};
  double rotation = 0.0;
  std::vector<double> feature;
  std::vector<int> codes;  // quantized feature; preferred over `feature` when non-empty
  std::string id;
  std::string asset;

  bool operator==(const ObjectInstance&) const = default;
};

struct Scene {
  std::string id;
  std::vector<ObjectInstance> objects;

  std::size_t size() const noexcept { return objects.size(); }
  bool operator==(const Scene&) const = default;
};

inline constexpr int kNumRelations = 11;

struct SceneConfig {
  int num_categories = 8;                 // K_c
  int num_relations = kNumRelations;      // K_e
  int codebook_size = 16;                 // K_f
  int codes_per_object = 4;               // n_f
  int max_objects = 6;                    // N_max
  int feature_dim = 16;                   // d
  std::vector<std::string> category_names;

  void validate() const {
    require(num_categories >= 1 && codebook_size >= 1 && codes_per_object >= 1 &&
                max_objects >= 1 && feature_dim >= 1,
            "SceneConfig: all counts must be >= 1");
    require(num_relations == kNumRelations, "SceneConfig: num_relations must be 11");
    require(feature_dim % codes_per_object == 0,
            "SceneConfig: feature_dim must be divisible by codes_per_object");
    require(static_cast<int>(category_names.size()) == num_categories,
            "SceneConfig: category_names size must equal num_categories");
  }

  int category_index(const std::string& name) const {
    for (std::size_t i = 0; i < category_names.size(); ++i)
      if (category_names[i] == name) return static_cast<int>(i);
    return -1;
  }

  bool operator==(const SceneConfig&) const = default;
};

inline void validate_object(const ObjectInstance& o, const SceneConfig& cfg) {
  require(o.category >= 0 && o.category < cfg.num_categories, "object category out of vocabulary");
  for (double s : o.size) require(s > 0.0 && std::isfinite(s), "object size components must be > 0");
  for (double t : o.location) require(std::isfinite(t), "object location must be finite");
  require(std::isfinite(o.rotation) && o.rotation >= -kPi && o.rotation < kPi,
          "object rotation must lie in [-pi, pi)");
}

inline void validate_scene(const Scene& s, const SceneConfig& cfg) {
  require(!s.objects.empty(), "scene must contain at least one object");
  require(static_cast<int>(s.objects.size()) <= cfg.max_objects, "scene exceeds max_objects");
  for (const auto& o : s.objects) validate_object(o, cfg);
}

}  // namespace scenediff
