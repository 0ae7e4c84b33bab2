#include <gtest/gtest.h>

#include <cmath>

#include "mininet/losses.hpp"
#include "mininet/rng.hpp"

namespace mininet {
namespace {

Vector<double> vec(std::initializer_list<double> v) {
  Vector<double> x(static_cast<Index>(v.size()));
  std::copy(v.begin(), v.end(), x.data());
  return x;
}

TEST(RankingLoss, MaxMaxHandArithmetic) {
  EXPECT_NEAR(mm_ranking_loss(vec({0.8, 0.05, 0.15}), vec({0.1, 0.02}), 1.0), 0.3, 1e-12);
}

TEST(RankingLoss, SaturatesWhenMarginMet) {
  EXPECT_EQ(mm_ranking_loss(vec({1.0, 0.0}), vec({0.0, 0.0}), 1.0), 0.0);
  EXPECT_EQ(mm_ranking_loss(vec({0.9, 0.1}), vec({0.2, 0.1}), 0.5), 0.0);
}

TEST(RankingLoss, EqualMaximaGiveMarginExactly) {
  EXPECT_EQ(mm_ranking_loss(vec({0.4, 0.6}), vec({0.6, 0.4}), 1.0), 1.0);
  for (auto v : kAllRankingVariants) {
    EXPECT_EQ(variant_ranking_loss(vec({0.5, 0.5}), vec({0.5, 0.5}), 0.75, v), 0.75)
        << to_string(v);
  }
}

TEST(RankingLoss, VariantHandArithmetic) {
  const auto ep = vec({0.2, 0.8});
  const auto en = vec({0.1, 0.5});
  EXPECT_NEAR(variant_ranking_loss(ep, en, 1.0, RankingVariant::kMinMax), 1.3, 1e-12);
  EXPECT_NEAR(variant_ranking_loss(ep, en, 1.0, RankingVariant::kMaxMin), 0.3, 1e-12);
  EXPECT_NEAR(variant_ranking_loss(ep, en, 1.0, RankingVariant::kMinMin), 1.0 - 0.2 + 0.1, 1e-12);
  EXPECT_NEAR(variant_ranking_loss(ep, en, 1.0, RankingVariant::kMaxMax), 1.0 - 0.8 + 0.5, 1e-12);
}

TEST(RankingLoss, EmptySequenceIsAnError) {
  EXPECT_THROW(mm_ranking_loss(Vector<double>(), vec({0.5}), 1.0), ShapeError);
  EXPECT_THROW(mm_ranking_loss(vec({0.5}), Vector<double>(), 1.0), ShapeError);
}

TEST(RankingLoss, VariantNamesRoundTrip) {
  for (auto v : kAllRankingVariants) EXPECT_EQ(parse_ranking_variant(to_string(v)), v);
  EXPECT_THROW(parse_ranking_variant("max-mean"), ConfigError);
}

TEST(RankingLoss, TiesSelectLowestIndex) {
  EXPECT_EQ(select_index(vec({0.2, 0.5, 0.5}), Statistic::kMax), 1);
  EXPECT_EQ(select_index(vec({0.1, 0.5, 0.1}), Statistic::kMin), 0);
}

TEST(Bce, Examples) {
  EXPECT_LE(bce(1.0, 1), 1.01e-7);
  EXPECT_NEAR(bce(1.0, 1), -std::log(1.0 - 1e-7), 1e-15);
  EXPECT_NEAR(bce(0.5, 1), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce(0.5, 0), std::log(2.0), 1e-12);
  EXPECT_NEAR(bce(0.0, 1), 16.118095650958, 1e-9);
  EXPECT_NEAR(bce(1.0, 0), 16.118095650958, 1e-9);
}

TEST(Bce, LogDomainFormAgreesWithProbabilityForm) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double y = rng.uniform(1e-9, 1.0 - 1e-9);
    EXPECT_NEAR(bce_from_log_prob(std::log(y)), bce(y, 1), 1e-9);
    EXPECT_NEAR(bce_from_log_prob(std::log1p(-y)), bce(y, 0), 1e-9);
  }
  EXPECT_NEAR(bce_from_log_prob(-1e-300), bce(1.0, 1), 1e-15);
  EXPECT_NEAR(bce_from_log_prob(-1e300), bce(0.0, 1), 1e-12);
}

BagForward<double> fake_forward(Vector<double> norm, double prob_interest) {
  BagForward<double> fw;
  fw.norm_scores = std::move(norm);
  fw.log_prob_interest = std::log(prob_interest);
  fw.log_prob_noninterest = std::log1p(-prob_interest);
  fw.event_prob = prob_interest;
  return fw;
}

TEST(TotalLoss, SumOfHandComputedTerms) {
  const auto pos = fake_forward(vec({0.8, 0.2}), 0.5);
  const auto neg = fake_forward(vec({0.1, 0.9 - 0.8}), 0.5);
  const auto l = total_loss(pos, neg, LossConfig{});
  EXPECT_NEAR(l.mm, 0.3, 1e-12);
  EXPECT_NEAR(l.bce_pos, std::log(2.0), 1e-12);
  EXPECT_NEAR(l.bce_neg, std::log(2.0), 1e-12);
  EXPECT_NEAR(l.total, 0.3 + 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(l.total, 1.6863, 1e-4);
}

TEST(TotalLoss, VanishesWhenEverythingIsSatisfied) {
  const auto pos = fake_forward(vec({1.0, 0.0}), 1.0 - 1e-7);
  const auto neg = fake_forward(vec({0.0, 0.0}), 1e-7);
  const auto l = total_loss(pos, neg, LossConfig{});
  EXPECT_EQ(l.mm, 0.0);
  EXPECT_LT(l.total, 3e-7);
}

TEST(TotalLoss, AblationFlagsDropTerms) {
  const auto pos = fake_forward(vec({0.8, 0.2}), 0.5);
  const auto neg = fake_forward(vec({0.1, 0.1}), 0.5);
  const auto no_mm = total_loss(pos, neg, LossConfig{.no_mmrl = true});
  EXPECT_EQ(no_mm.mm, 0.0);
  EXPECT_NEAR(no_mm.total, 2 * std::log(2.0), 1e-12);
  const auto no_bce = total_loss(pos, neg, LossConfig{.no_bcm = true});
  EXPECT_EQ(no_bce.bce_pos + no_bce.bce_neg, 0.0);
  EXPECT_NEAR(no_bce.total, 0.3, 1e-12);
  EXPECT_THROW(total_loss(pos, neg, LossConfig{.no_mmrl = true, .no_bcm = true}), ConfigError);
  EXPECT_THROW(total_loss(pos, neg, LossConfig{.epsilon = -1.0}), ConfigError);
}

Bag<double> random_bag(Rng& rng, const Architecture& a, Index n) {
  Bag<double> bag;
  bag.vision.resize(n, a.vision_dim);
  bag.audio.resize(n, a.audio_dim);
  for (Index i = 0; i < bag.vision.size(); ++i) bag.vision.data()[i] = rng.normal();
  for (Index i = 0; i < bag.audio.size(); ++i) bag.audio.data()[i] = rng.normal();
  return bag;
}

TEST(Backward, RejectsStaleForwardCaches) {
  Rng rng(2);
  auto p = init_params<double>(Architecture::toy(), 2);
  const auto pos = forward_bag(random_bag(rng, p.arch, 4), p);
  const auto neg = forward_bag(random_bag(rng, p.arch, 4), p);
  EXPECT_NO_THROW(backward(pos, neg, p, LossConfig{}));
  p.vision_w1(0, 0) += 1.0;
  p.mark_modified();
  EXPECT_THROW(backward(pos, neg, p, LossConfig{}), Error);
}

TEST(Backward, SaturatedHingeWithoutClassificationIsExactlyZero) {
  Rng rng(3);
  auto p = init_params<double>(Architecture::toy(), 3);
  // A zero margin with a single-instance positive bag (E = 1) and a larger
  // negative bag (max E < 1) keeps the hinge inactive.
  const auto pos = forward_bag(random_bag(rng, p.arch, 1), p);
  const auto neg = forward_bag(random_bag(rng, p.arch, 5), p);
  const LossConfig cfg{.epsilon = 0.0, .no_bcm = true};
  ASSERT_EQ(total_loss(pos, neg, cfg).total, 0.0);
  const auto g = backward(pos, neg, p, cfg);
  for (const auto& v : g.views()) {
    for (double x : v.values) ASSERT_EQ(x, 0.0) << v.name;
  }
}

TEST(Backward, GradientShapesMatchParameters) {
  Rng rng(4);
  const auto p = init_params<float>(Architecture{}, 4);
  Bag<float> a, b;
  a.vision = Matrix<float>::Random(6, 512);
  a.audio = Matrix<float>::Random(6, 128);
  b.vision = Matrix<float>::Random(6, 512);
  b.audio = Matrix<float>::Random(6, 128);
  const auto g = backward(forward_bag(a, p), forward_bag(b, p), p, LossConfig{});
  EXPECT_TRUE(p.same_shape(g));
  EXPECT_TRUE(g.all_finite());
}

}  // namespace
}  // namespace mininet
