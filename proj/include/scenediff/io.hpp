#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include <json.hpp>

#include "scenediff/datagen.hpp"
#include "scenediff/evaluation.hpp"
#include "scenediff/graph_diffusion.hpp"

namespace scenediff {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot write " + path.string());
  f << text;
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InvalidArgument(what + ": " + e.what());
  }
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

namespace detail {

inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, bool strict, const std::string& where) {
  require(j.is_object(), where + ": expected an object");
  if (!strict) return;
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    require(ok, where + ": unknown field '" + key + "'");
  }
}

template <class T>
T get(const Json& j, const char* key, const std::string& where) {
  require(j.contains(key), where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw InvalidArgument(where + ": bad field '" + key + "': " + e.what());
  }
}

inline Vec3 get_vec3(const Json& j, const char* key, const std::string& where) {
  const auto v = get<std::vector<double>>(j, key, where);
  require(v.size() == 3, where + ": field '" + key + "' must have 3 values");
  return {v[0], v[1], v[2]};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scenes

inline Json scene_to_json(const Scene& scene, const SceneConfig& cfg, bool with_relations = true) {
  Json objects = Json::array();
  for (const auto& o : scene.objects) {
    Json jo{{"id", o.id},
            {"category", cfg.category_names.at(o.category)},
            {"category_id", o.category},
            {"t", o.location},
            {"s", o.size},
            {"r", o.rotation}};
    if (!o.feature.empty()) jo["feature"] = o.feature;
    if (!o.codes.empty()) jo["codes"] = o.codes;
    if (!o.asset.empty()) jo["asset"] = o.asset;
    objects.push_back(std::move(jo));
  }
  Json j{{"schema_version", kSchemaVersion}, {"id", scene.id}, {"objects", std::move(objects)}};
  if (with_relations) {
    Json rel = Json::array();
    const int n = static_cast<int>(scene.size());
    const auto r = extract_relations(scene);
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b)
        rel.push_back({{"i", a}, {"j", b}, {"label", std::string(relation_name(r[pair_index(n, a, b)]))}});
    j["relations"] = std::move(rel);
  }
  return j;
}

inline Scene scene_from_json(const Json& j, const SceneConfig& cfg, bool strict = false) {
  detail::check_keys(j, {"schema_version", "id", "objects", "relations"}, strict, "scene");
  if (j.contains("schema_version"))
    require(detail::get<int>(j, "schema_version", "scene") == kSchemaVersion, "scene: unsupported schema_version");
  Scene s;
  s.id = j.value("id", std::string());
  require(j.contains("objects") && j.at("objects").is_array(), "scene: 'objects' must be an array");
  for (const auto& jo : j.at("objects")) {
    const std::string where = "scene object";
    detail::check_keys(jo, {"id", "category", "category_id", "t", "s", "r", "feature", "codes", "asset"}, strict, where);
    ObjectInstance o;
    o.id = jo.value("id", std::string());
    o.asset = jo.value("asset", std::string());
    if (jo.contains("category_id")) {
      o.category = detail::get<int>(jo, "category_id", where);
      require(o.category >= 0 && o.category < cfg.num_categories, where + ": category_id out of range");
      if (jo.contains("category"))
        require(detail::get<std::string>(jo, "category", where) == cfg.category_names[o.category],
                where + ": category and category_id disagree");
    } else {
      const auto name = detail::get<std::string>(jo, "category", where);
      o.category = cfg.category_index(name);
      require(o.category >= 0, where + ": unknown category '" + name + "'");
    }
    o.location = detail::get_vec3(jo, "t", where);
    o.size = detail::get_vec3(jo, "s", where);
    o.rotation = detail::get<double>(jo, "r", where);
    if (jo.contains("feature")) o.feature = detail::get<std::vector<double>>(jo, "feature", where);
    if (jo.contains("codes")) o.codes = detail::get<std::vector<int>>(jo, "codes", where);
    require(!o.feature.empty() || !o.codes.empty(), where + ": needs a feature or codes");
    s.objects.push_back(std::move(o));
  }
  validate_scene(s, cfg);
  return s;
}

// ---------------------------------------------------------------------------
// Instructions

inline Json instruction_to_json(const Instruction& in, const SceneConfig& cfg) {
  Json triplets = Json::array();
  for (const auto& t : in.triplets)
    triplets.push_back({cfg.category_names.at(t.subject), std::string(relation_name(t.relation)),
                        cfg.category_names.at(t.object)});
  Json j{{"text", in.text}, {"triplets", std::move(triplets)}};
  if (in.style) {
    Json style{{"codes", in.style->codes}};
    if (in.style->category) style["category"] = cfg.category_names.at(*in.style->category);
    j["style"] = std::move(style);
  }
  return j;
}

inline Instruction instruction_from_json(const Json& j, const SceneConfig& cfg, bool strict = false) {
  detail::check_keys(j, {"text", "triplets", "style"}, strict, "instruction");
  Instruction in;
  in.text = j.value("text", std::string());
  for (const auto& t : j.value("triplets", Json::array())) {
    require(t.is_array() && t.size() == 3, "instruction: triplet must be [subject, relation, object]");
    const int s = cfg.category_index(t[0].get<std::string>());
    const auto r = relation_from_name(t[1].get<std::string>());
    const int o = cfg.category_index(t[2].get<std::string>());
    require(s >= 0 && o >= 0 && r.has_value(), "instruction: unknown triplet vocabulary");
    in.triplets.push_back({s, *r, o});
  }
  if (j.contains("style")) {
    const auto& js = j.at("style");
    detail::check_keys(js, {"codes", "category"}, strict, "instruction style");
    StyleConstraint st;
    st.codes = detail::get<std::vector<int>>(js, "codes", "instruction style");
    if (js.contains("category")) {
      const int c = cfg.category_index(js.at("category").get<std::string>());
      require(c >= 0, "instruction style: unknown category");
      st.category = c;
    }
    in.style = std::move(st);
  }
  validate_instruction(in, cfg);
  return in;
}

// ---------------------------------------------------------------------------
// Bundle parts

inline Json config_to_json(const SceneConfig& c) {
  return {{"num_categories", c.num_categories}, {"num_relations", c.num_relations},
          {"codebook_size", c.codebook_size},   {"codes_per_object", c.codes_per_object},
          {"max_objects", c.max_objects},       {"feature_dim", c.feature_dim},
          {"category_names", c.category_names}};
}

inline SceneConfig config_from_json(const Json& j, bool strict = false) {
  const std::string w = "config";
  detail::check_keys(j, {"num_categories", "num_relations", "codebook_size", "codes_per_object", "max_objects",
                         "feature_dim", "category_names", "seed"},
                     strict, w);
  SceneConfig c;
  c.num_categories = detail::get<int>(j, "num_categories", w);
  c.num_relations = detail::get<int>(j, "num_relations", w);
  c.codebook_size = detail::get<int>(j, "codebook_size", w);
  c.codes_per_object = detail::get<int>(j, "codes_per_object", w);
  c.max_objects = detail::get<int>(j, "max_objects", w);
  c.feature_dim = detail::get<int>(j, "feature_dim", w);
  c.category_names = detail::get<std::vector<std::string>>(j, "category_names", w);
  c.validate();
  return c;
}

inline Json codebook_to_json(const Codebook& cb) {
  return {{"size", cb.size()}, {"codes_per_feature", cb.codes_per_feature()}, {"feature_dim", cb.feature_dim()},
          {"entries", cb.entries()}};
}

inline Codebook codebook_from_json(const Json& j, bool strict = false) {
  const std::string w = "codebook";
  detail::check_keys(j, {"size", "codes_per_feature", "feature_dim", "entries"}, strict, w);
  return Codebook(detail::get<std::vector<double>>(j, "entries", w), detail::get<int>(j, "size", w),
                  detail::get<int>(j, "codes_per_feature", w), detail::get<int>(j, "feature_dim", w));
}

inline Json library_to_json(const ObjectLibrary& lib) {
  Json a = Json::array();
  for (const auto& e : lib.entries) a.push_back({{"asset", e.asset}, {"category_id", e.category}, {"feature", e.feature}});
  return {{"entries", std::move(a)}};
}

inline ObjectLibrary library_from_json(const Json& j, bool strict = false) {
  detail::check_keys(j, {"entries"}, strict, "library");
  ObjectLibrary lib;
  for (const auto& e : detail::get<Json>(j, "entries", "library")) {
    detail::check_keys(e, {"asset", "category_id", "feature"}, strict, "library entry");
    lib.entries.push_back({detail::get<std::string>(e, "asset", "library entry"),
                           detail::get<int>(e, "category_id", "library entry"),
                           detail::get<std::vector<double>>(e, "feature", "library entry")});
  }
  return lib;
}

inline Json stats_to_json(const LayoutStats& st) { return {{"mean", st.mean}, {"stddev", st.stddev}}; }

inline LayoutStats stats_from_json(const Json& j, bool strict = false) {
  detail::check_keys(j, {"mean", "stddev"}, strict, "stats");
  LayoutStats st;
  const auto m = detail::get<std::vector<double>>(j, "mean", "stats");
  const auto s = detail::get<std::vector<double>>(j, "stddev", "stats");
  require(m.size() == kLayoutColumns && s.size() == kLayoutColumns, "stats: need 8 means and 8 deviations");
  std::copy(m.begin(), m.end(), st.mean.begin());
  std::copy(s.begin(), s.end(), st.stddev.begin());
  for (double v : st.stddev) require(v > 0.0, "stats: deviations must be positive");
  return st;
}

inline Json scenes_to_json(const DatasetBundle& b) {
  Json arr = Json::array();
  for (std::size_t i = 0; i < b.scenes.size(); ++i) {
    Json s = scene_to_json(b.scenes[i], b.config);
    arr.push_back({{"scene", std::move(s)}, {"instruction", instruction_to_json(b.instructions[i], b.config)}});
  }
  return {{"schema_version", kSchemaVersion}, {"seed", b.seed}, {"scenes", std::move(arr)}};
}

/// Writes scenes.json, codebook.json, library.json, stats.json and config.json.
inline void save_bundle(const DatasetBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "scenes.json", dump_json(scenes_to_json(b)));
  write_text(dir / "codebook.json", dump_json(codebook_to_json(b.codebook)));
  write_text(dir / "library.json", dump_json(library_to_json(b.library)));
  write_text(dir / "stats.json", dump_json(stats_to_json(b.stats)));
  Json cfg = config_to_json(b.config);
  cfg["seed"] = b.seed;
  write_text(dir / "config.json", dump_json(cfg));
}

/// Loads a bundle directory; graphs are re-derived from the scenes.
inline DatasetBundle load_bundle(const std::filesystem::path& dir, bool strict = false) {
  DatasetBundle b;
  const Json cfg = parse_json(read_text(dir / "config.json"), "config.json");
  b.config = config_from_json(cfg, strict);
  b.seed = cfg.value("seed", std::uint64_t{0});
  b.codebook = codebook_from_json(parse_json(read_text(dir / "codebook.json"), "codebook.json"), strict);
  b.library = library_from_json(parse_json(read_text(dir / "library.json"), "library.json"), strict);
  b.stats = stats_from_json(parse_json(read_text(dir / "stats.json"), "stats.json"), strict);
  const Json scenes = parse_json(read_text(dir / "scenes.json"), "scenes.json");
  detail::check_keys(scenes, {"schema_version", "seed", "scenes"}, strict, "scenes.json");
  for (const auto& e : detail::get<Json>(scenes, "scenes", "scenes.json")) {
    detail::check_keys(e, {"scene", "instruction"}, strict, "scenes.json entry");
    b.scenes.push_back(scene_from_json(detail::get<Json>(e, "scene", "scenes.json entry"), b.config, strict));
    b.instructions.push_back(e.contains("instruction") ? instruction_from_json(e.at("instruction"), b.config, strict)
                                                       : Instruction{});
    b.graphs.push_back(pad_graph(derive_semantic_graph(b.scenes.back(), b.codebook, b.config), b.config.max_objects));
  }
  require(!b.scenes.empty(), "scenes.json: no scenes");
  return b;
}

// ---------------------------------------------------------------------------
// Schedule dump and reports

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// FNV-1a over the %.17g rendering of every entry, column-major.
inline std::string matrix_checksum(const Eigen::MatrixXd& m) {
  std::string bytes;
  char buf[32];
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::snprintf(buf, sizeof buf, "%.17g;", m(r, c));
      bytes += buf;
    }
  return hex64(fnv1a(bytes));
}

inline Json schedule_to_json(const GraphSchedule& s) {
  Json kinds = Json::object();
  for (VarKind k : kVarKinds) {
    const auto& m = s.of(k);
    std::vector<double> a, b, g;
    for (int t = 1; t <= m.steps(); ++t) {
      a.push_back(m.alpha(t));
      b.push_back(m.beta(t));
      g.push_back(m.gamma(t));
    }
    kinds[var_kind_name(k)] = {{"K", m.real_states()},
                               {"alpha", a},
                               {"beta", b},
                               {"gamma", g},
                               {"qbar_T_checksum", matrix_checksum(m.cumulative(m.steps()))}};
  }
  return {{"kernel", kernel_name(s.kernel)},
          {"T", s.steps()},
          {"leak", s.category.options().leak},
          {"freeze_empty", s.category.options().freeze_empty},
          {"kinds", std::move(kinds)}};
}

inline Json report_to_json(const EvalReport& r) {
  Json metrics = Json::object();
  metrics["irecall"] = r.irecall ? Json(*r.irecall) : Json(nullptr);
  metrics["tv"] = r.tv ? Json(*r.tv) : Json(nullptr);
  metrics["style_match"] = r.style_match ? Json(*r.style_match) : Json(nullptr);
  return {{"metrics", std::move(metrics)},
          {"notes", {{"style_match", "fraction of objects whose quantized codes match the style signature; "
                                     "a code-level substitute for embedding similarity"}}},
          {"counts",
           {{"scenes", r.scenes}, {"required_triplets", r.required_triplets}, {"satisfied_triplets", r.satisfied_triplets}}},
          {"config_fingerprint", r.config_fingerprint}};
}

}  // namespace scenediff
