#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "test_util.hpp"

using namespace scenediff;

namespace {

DatagenOptions small() {
  DatagenOptions o;
  o.num_scenes = 40;
  return o;
}

std::string bundle_bytes(const DatasetBundle& b) {
  return dump_json(scenes_to_json(b)) + dump_json(codebook_to_json(b.codebook)) +
         dump_json(library_to_json(b.library)) + dump_json(stats_to_json(b.stats));
}

}  // namespace

TEST(Datagen, SameSeedSameBytes) {
  const auto a = generate_dataset(bedroom_config(), 5, small());
  const auto b = generate_dataset(bedroom_config(), 5, small());
  EXPECT_EQ(bundle_bytes(a), bundle_bytes(b));
  const auto c = generate_dataset(bedroom_config(), 6, small());
  EXPECT_NE(bundle_bytes(a), bundle_bytes(c));
}

TEST(Datagen, BundleIsValid) {
  const auto b = generate_dataset(bedroom_config(), 1, small());
  EXPECT_NO_THROW(validate_bundle(b));
  ASSERT_EQ(b.scenes.size(), 40u);
  for (std::size_t i = 0; i < b.scenes.size(); ++i) {
    validate_scene(b.scenes[i], b.config);
    EXPECT_GE(b.scenes[i].size(), 3u);
    EXPECT_TRUE(instruction_matches(b.graphs[i], b.instructions[i]));
    // every triplet also holds in the geometry
    for (const auto& t : b.instructions[i].triplets) EXPECT_TRUE(triplet_in_scene(b.scenes[i], t));
    // scenes are stored in canonical order
    EXPECT_EQ(canonicalize(b.scenes[i]), b.scenes[i]);
  }
}

TEST(Datagen, InstructionTextParsesBack) {
  const auto b = generate_dataset(bedroom_config(), 2, small());
  for (const auto& in : b.instructions) EXPECT_EQ(parse_instruction(in.text, b.config), in) << in.text;
}

TEST(Datagen, StatsRecompute) {
  const auto b = generate_dataset(bedroom_config(), 3, small());
  std::vector<LayoutMatrix> layouts;
  for (const auto& s : b.scenes) layouts.push_back(layout_of(s));
  // independent two-pass mean and population deviation per column; the
  // rotation pair is left unscaled
  for (int c = 6; c < kLayoutColumns; ++c) {
    EXPECT_EQ(b.stats.mean[c], 0.0);
    EXPECT_EQ(b.stats.stddev[c], 1.0);
  }
  for (int c = 0; c < 6; ++c) {
    double sum = 0.0, n = 0.0;
    for (const auto& l : layouts)
      for (Eigen::Index r = 0; r < l.rows(); ++r) sum += l(r, c), n += 1.0;
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& l : layouts)
      for (Eigen::Index r = 0; r < l.rows(); ++r) ss += (l(r, c) - mean) * (l(r, c) - mean);
    EXPECT_NEAR(b.stats.mean[c], mean, 1e-12) << c;
    EXPECT_NEAR(b.stats.stddev[c], std::sqrt(ss / n), 1e-9) << c;
  }
}

TEST(Datagen, ValidateCatchesTampering) {
  auto b = generate_dataset(bedroom_config(), 4, small());
  auto moved = b;
  moved.scenes[0].objects[0].location[0] += 10.0;
  EXPECT_THROW(validate_bundle(moved), InvalidArgument);
  auto bad_stats = b;
  bad_stats.stats.mean[0] += 1e-6;
  EXPECT_THROW(validate_bundle(bad_stats), InvalidArgument);
}

TEST(Datagen, LibraryCoversEveryObject) {
  const auto b = generate_dataset(bedroom_config(), 8, small());
  std::set<std::string> assets;
  for (const auto& e : b.library.entries) assets.insert(e.asset);
  for (const auto& s : b.scenes)
    for (const auto& o : s.objects) EXPECT_TRUE(assets.count(o.asset)) << o.asset;
}

TEST(Datagen, RejectsBadOptions) {
  auto cfg = bedroom_config();
  cfg.max_objects = 2;
  EXPECT_THROW(generate_dataset(cfg, 1, small()), InvalidArgument);
  DatagenOptions none = small();
  none.num_scenes = 0;
  EXPECT_THROW(generate_dataset(bedroom_config(), 1, none), InvalidArgument);
  EXPECT_THROW(toy_support(toy_config(), 1, 0), InvalidArgument);
  EXPECT_THROW(toy_support(toy_config(), 1, 21), InvalidArgument);
}

TEST(ToySupport, FiniteSupport) {
  const auto b = toy_support(toy_config(), 7);
  EXPECT_NO_THROW(validate_bundle(b));
  const auto h = graph_distribution(b);
  EXPECT_LE(h.size(), 20u);
  EXPECT_GE(h.size(), 2u);
  double z = 0.0;
  for (const auto& [k, v] : h) z += v;
  EXPECT_NEAR(z, 1.0, 1e-12);
  // rebuilding with the same seed gives the same distribution
  EXPECT_EQ(graph_distribution(toy_support(toy_config(), 7)), h);
}

TEST(ToySupport, FrequentTripletsAppearInSeveralGraphs) {
  const auto b = toy_support(toy_config(), 7);
  const auto triplets = frequent_triplets(b);
  ASSERT_FALSE(triplets.empty());
  std::map<std::string, const SemanticGraph*> distinct;
  for (const auto& g : b.graphs) distinct.emplace(g.key(), &g);
  for (const auto& t : triplets) {
    int n = 0;
    for (const auto& [k, g] : distinct) n += triplet_realized(*g, t) ? 1 : 0;
    EXPECT_GE(n, 2);
  }
}
