#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace scenediff;
using scenediff::testing::make_object;

namespace {

Relation rel(double sx, double sy, double ox = 0.0, double oy = 0.0) {
  return relation_between(make_object(0, sx, sy), make_object(0, ox, oy));
}

}  // namespace

TEST(RelationRules, WorkedExamples) {
  EXPECT_EQ(rel(2, 0), Relation::kRightOf);
  EXPECT_EQ(rel(0, 0.5), Relation::kCloselyInFrontOf);
  EXPECT_EQ(rel(5, 0), Relation::kNone);
  EXPECT_EQ(rel(-2, 0), Relation::kLeftOf);
  EXPECT_EQ(rel(0, -2), Relation::kBehind);
  // lamp standing on a bed: subject center inside the bed footprint, 1.0 above vs half-heights 0.75
  const auto bed = make_object(0, 0, 0, 0.25, {2.0, 1.6, 0.5});
  const auto lamp = make_object(1, 0.3, 0.2, 1.25, {0.3, 0.3, 1.0});
  EXPECT_EQ(relation_between(lamp, bed), Relation::kAbove);
  EXPECT_EQ(relation_between(bed, lamp), Relation::kBelow);
}

TEST(RelationRules, DistanceBoundaries) {
  EXPECT_EQ(rel(1.0, 0), Relation::kCloselyRightOf);
  EXPECT_EQ(rel(std::nextafter(1.0, 2.0), 0), Relation::kRightOf);
  EXPECT_EQ(rel(3.0, 0), Relation::kRightOf);
  EXPECT_EQ(rel(std::nextafter(3.0, 4.0), 0), Relation::kNone);
}

TEST(RelationRules, SectorBoundariesFollowHalfOpenIntervals) {
  // theta = pi/4 opens the front sector, theta = -pi/4 the right sector
  EXPECT_EQ(rel(2, 2), Relation::kInFrontOf);
  EXPECT_EQ(rel(2, -2), Relation::kRightOf);
  EXPECT_EQ(rel(-2, 2), Relation::kLeftOf);
  EXPECT_EQ(rel(-2, -2), Relation::kBehind);
}

TEST(RelationRules, VerticalSeparationWithoutOverlapFallsThrough) {
  const auto a = make_object(0, 2.0, 0.0, 3.0, {0.5, 0.5, 0.5});
  const auto b = make_object(0, 0.0, 0.0, 0.25, {0.5, 0.5, 0.5});
  EXPECT_EQ(relation_between(a, b), Relation::kRightOf);
}

TEST(RelationRules, InverseMapping) {
  EXPECT_EQ(inverse_relation(Relation::kNone), Relation::kNone);
  EXPECT_EQ(inverse_relation(Relation::kLeftOf), Relation::kRightOf);
  EXPECT_EQ(inverse_relation(Relation::kAbove), Relation::kBelow);
  EXPECT_EQ(inverse_relation(Relation::kCloselyInFrontOf), Relation::kCloselyBehind);
  for (int r = 0; r < kNumRelations; ++r) {
    const auto x = static_cast<Relation>(r);
    EXPECT_EQ(inverse_relation(inverse_relation(x)), x);
  }
}

TEST(RelationRules, NamesRoundtrip) {
  for (int r = 0; r < kNumRelations; ++r) {
    const auto x = static_cast<Relation>(r);
    EXPECT_EQ(relation_from_name(relation_name(x)), x);
  }
  EXPECT_FALSE(relation_from_name("beside").has_value());
}

TEST(RelationRules, ExtractRelations) {
  Scene one{"one", {make_object(0, 0, 0)}};
  EXPECT_TRUE(extract_relations(one).empty());
  Scene three{"three", {make_object(0, 0, 0), make_object(1, -2, 0), make_object(2, 0, 0.5)}};
  const auto r = extract_relations(three);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[pair_index(3, 0, 1)], Relation::kRightOf);
  EXPECT_EQ(r[pair_index(3, 0, 2)], Relation::kCloselyBehind);
  EXPECT_EQ(r[pair_index(3, 1, 2)], Relation::kLeftOf);
}

TEST(RelationRules, CoincidentGroundCentersHaveNoDirection) {
  const auto a = make_object(0, 1, 1, 0.5), b = make_object(1, 1, 1, 0.8);
  EXPECT_EQ(relation_between(a, b), Relation::kNone);
  EXPECT_EQ(relation_between(b, a), Relation::kNone);
  // vertical separation still wins
  EXPECT_EQ(relation_between(make_object(0, 1, 1, 2.0), b), Relation::kAbove);
}

TEST(RelationRules, AntisymmetryAndTranslationInvariance) {
  Rng rng(42);
  for (int i = 0; i < 5000; ++i) {
    auto random_object = [&] {
      return make_object(0, rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(0, 2),
                         {rng.uniform(0.2, 2), rng.uniform(0.2, 2), rng.uniform(0.2, 1.5)});
    };
    auto a = random_object(), b = random_object();
    if (i % 3 == 0) b.location[0] = a.location[0], b.location[1] = a.location[1];  // stacked pairs
    const Relation ab = relation_between(a, b);
    ASSERT_EQ(relation_between(b, a), inverse_relation(ab));
    // dyadic shift keeps coordinate differences exact
    const double dx = std::ldexp(static_cast<double>(rng.integer(-64, 64)), -3);
    const double dy = std::ldexp(static_cast<double>(rng.integer(-64, 64)), -3);
    a.location[0] += dx, b.location[0] += dx, a.location[1] += dy, b.location[1] += dy;
    ASSERT_EQ(relation_between(a, b), ab);
  }
}

TEST(RelationRules, CustomThresholds) {
  const RelationThresholds th{0.5, 1.5};
  EXPECT_EQ(relation_between(make_object(0, 0.8, 0), make_object(0, 0, 0), th), Relation::kRightOf);
  EXPECT_EQ(relation_between(make_object(0, 2.0, 0), make_object(0, 0, 0), th), Relation::kNone);
}
