#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mininet/eval.hpp"

namespace mininet {
namespace {

// AP from the definition: for every positive, the precision at its rank,
// where rank counts segments that sort ahead of it (higher score, or equal
// score and lower index). No sorting involved.
double brute_force_ap(const std::vector<int>& labels, const std::vector<double>& scores) {
  const std::size_t n = labels.size();
  std::size_t positives = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 0) continue;
    ++positives;
    std::size_t rank = 1, hits = 1;
    for (std::size_t j = 0; j < n; ++j) {
      const bool ahead = scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
      if (ahead) {
        ++rank;
        if (labels[j] != 0) ++hits;
      }
    }
    sum += static_cast<double>(hits) / static_cast<double>(rank);
  }
  return positives == 0 ? 0.0 : sum / static_cast<double>(positives);
}

TEST(AveragePrecision, HandExamples) {
  EXPECT_DOUBLE_EQ(average_precision(std::vector<int>{1, 0, 1, 0},
                                     std::vector<double>{0.9, 0.8, 0.7, 0.1}),
                   (1.0 + 2.0 / 3.0) / 2.0);
  EXPECT_NEAR(average_precision(std::vector<int>{1, 0, 1, 0},
                                std::vector<double>{0.9, 0.8, 0.7, 0.1}),
              0.8333, 1e-4);
  EXPECT_EQ(average_precision(std::vector<int>{0, 1}, std::vector<double>{0.1, 0.9}), 1.0);
  EXPECT_EQ(average_precision(std::vector<int>{0, 1}, std::vector<double>{0.9, 0.1}), 0.5);
  EXPECT_EQ(average_precision(std::vector<int>{0, 0}, std::vector<double>{0.9, 0.1}), 0.0);
}

TEST(AveragePrecision, TiesFavorTheEarlierSegment) {
  EXPECT_EQ(average_precision(std::vector<int>{1, 0}, std::vector<double>{0.5, 0.5}), 1.0);
  EXPECT_EQ(average_precision(std::vector<int>{0, 1}, std::vector<double>{0.5, 0.5}), 0.5);
}

TEST(AveragePrecision, RejectsBadInputs) {
  EXPECT_THROW(average_precision(std::vector<int>{1}, std::vector<double>{0.1, 0.2}), ShapeError);
  EXPECT_THROW(average_precision(std::vector<int>{}, std::vector<double>{}), ShapeError);
}

TEST(AveragePrecision, MatchesBruteForce) {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.below(40));
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng.uniform() < 0.3 ? 1 : 0;
      // Coarse scores so ties are common.
      scores[i] = static_cast<double>(rng.below(6)) / 5.0;
    }
    ASSERT_DOUBLE_EQ(average_precision(labels, scores), brute_force_ap(labels, scores));
  }
}

TEST(AveragePrecision, InvariantUnderMonotoneTransforms) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.below(30));
    std::vector<int> labels(n);
    std::vector<double> scores(n), transformed(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng.below(2));
      scores[i] = rng.normal();
      transformed[i] = std::exp(3.0 * scores[i]) + 7.0;
    }
    ASSERT_EQ(average_precision(labels, scores), average_precision(labels, transformed));
  }
}

TEST(AveragePrecision, OneExactlyWhenPositivesLead) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.below(20));
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng.below(2));
      scores[i] = rng.uniform();
    }
    labels[0] = 1;
    double min_pos = 2.0, max_neg = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i]) {
        min_pos = std::min(min_pos, scores[i]);
      } else {
        max_neg = std::max(max_neg, scores[i]);
      }
    }
    const bool perfect = min_pos > max_neg;
    ASSERT_EQ(average_precision(labels, scores) == 1.0, perfect);
  }
}

TEST(ApAtK, HandExamples) {
  const std::vector<int> labels{1, 0, 1, 0, 1, 1, 0};
  const std::vector<double> scores{7, 6, 5, 4, 3, 2, 1};
  // Hits at ranks 1, 3, 5 within the top 5; min(P, k) = 4.
  EXPECT_NEAR(ap_at_k(labels, scores, 5), (1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 4.0, 1e-15);
  EXPECT_NEAR(ap_at_k(labels, scores, 2), 1.0 / 2.0, 1e-15);
  EXPECT_THROW(ap_at_k(labels, scores, 0), ConfigError);
}

TEST(ApAtK, LargeKEqualsAveragePrecision) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.below(15));
    std::vector<int> labels(n);
    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng.below(2));
      scores[i] = rng.uniform();
    }
    ASSERT_DOUBLE_EQ(ap_at_k(labels, scores, n + rng.below(3)), average_precision(labels, scores));
  }
}

TEST(Top5, BinarizeImportanceTopHalf) {
  EXPECT_EQ(binarize_importance(std::vector<int>{4, 3, 2, 1}), (std::vector<int>{1, 1, 0, 0}));
  EXPECT_EQ(binarize_importance(std::vector<int>{1, 5, 3}), (std::vector<int>{0, 1, 1}));
  EXPECT_EQ(binarize_importance(std::vector<int>{2, 2, 2, 2}), (std::vector<int>{1, 1, 0, 0}));
}

VideoRecord labeled_video(std::string id, std::string event, std::vector<int> labels) {
  VideoRecord v;
  v.video_id = std::move(id);
  v.event_tag = std::move(event);
  v.vision = DenseMatrix::Zero(static_cast<Index>(labels.size()), 512);
  v.audio = DenseMatrix::Zero(static_cast<Index>(labels.size()), 128);
  v.labels = labels;
  v.summaries = {std::move(labels)};
  return v;
}

std::vector<double> descending(const VideoRecord& v) {
  std::vector<double> s(static_cast<std::size_t>(v.segment_count()));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = -static_cast<double>(i);
  return s;
}

TEST(Top5, SummariesAreAveraged) {
  auto v = labeled_video("v", "e", {0, 0, 0, 0, 0, 0});
  v.summaries = {{1, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0}, {1, 0, 0, 1, 0, 0}};
  // Per summary: 1, 1/2, (1 + 2/4) / 2.
  const auto scores = descending(v);
  EXPECT_NEAR(top5_video_ap(v, scores, SummaryMode::kSummaries), 0.75, 1e-15);
  const auto report = evaluate_top5_map_with(descending, {v}, "e");
  EXPECT_EQ(report.metric, Metric::kTop5Map);
  EXPECT_NEAR(report.aggregate, 0.75, 1e-15);
}

TEST(Top5, ImportanceModeBinarizesFirst) {
  auto v = labeled_video("v", "e", {1, 5, 3, 0});
  // Positives after binarization: segments 1 and 2; ranks 2 and 3.
  EXPECT_NEAR(top5_video_ap(v, descending(v), SummaryMode::kAuto), (1.0 / 2 + 2.0 / 3) / 2,
              1e-15);
  EXPECT_THROW(parse_summary_mode("mean"), ConfigError);
}

TEST(EvaluateMap, PerfectScorerGivesOne) {
  std::vector<VideoRecord> videos{labeled_video("a", "e", {0, 1, 1, 0}),
                                  labeled_video("b", "e", {1, 0, 0, 0}),
                                  labeled_video("c", "other", {0, 0, 0, 1})};
  const auto oracle = [](const VideoRecord& v) {
    return std::vector<double>(v.labels->begin(), v.labels->end());
  };
  const auto r = evaluate_map_with(oracle, videos, "e");
  EXPECT_EQ(r.aggregate, 1.0);
  ASSERT_EQ(r.per_video.size(), 2u);
  EXPECT_EQ(r.per_video[0].first, "a");
  EXPECT_THROW(evaluate_map_with(oracle, videos, "missing"), ConfigError);
}

TEST(EvaluateMap, SingleVideoEqualsItsAp) {
  std::vector<VideoRecord> videos{labeled_video("a", "e", {0, 1, 0, 1})};
  const auto r = evaluate_map_with(descending, videos, "e");
  EXPECT_DOUBLE_EQ(r.aggregate, (1.0 / 2 + 2.0 / 4) / 2);
}

TEST(EvaluateMap, OrderOfVideosDoesNotMatter) {
  Rng rng(5);
  std::vector<VideoRecord> videos;
  for (int i = 0; i < 12; ++i) {
    std::vector<int> labels(10);
    for (auto& l : labels) l = static_cast<int>(rng.below(2));
    labels[static_cast<std::size_t>(i % 10)] = 1;
    videos.push_back(labeled_video("v" + std::to_string(i), "e", labels));
  }
  const double forward = evaluate_map_with(descending, videos, "e").aggregate;
  std::reverse(videos.begin(), videos.end());
  EXPECT_NEAR(evaluate_map_with(descending, videos, "e", 3).aggregate, forward, 1e-15);
}

TEST(EvaluateMap, RandomScoresApproachTheExpectedValue) {
  // Balanced 2-of-4 labels: the expected AP of a uniformly random ranking is
  // the mean over the 6 placements of the positives.
  std::vector<VideoRecord> videos;
  for (int i = 0; i < 2000; ++i) {
    videos.push_back(labeled_video("v" + std::to_string(i), "e", {1, 1, 0, 0}));
  }
  double expected = 0.0;
  int placements = 0;
  for (int a = 1; a <= 4; ++a) {
    for (int b = a + 1; b <= 4; ++b) {
      expected += (1.0 / a + 2.0 / b) / 2.0;
      ++placements;
    }
  }
  expected /= placements;
  Rng rng(6);
  std::vector<std::vector<double>> draws;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    std::vector<double> s(4);
    for (auto& x : s) x = rng.uniform();
    draws.push_back(s);
  }
  const auto r = evaluate_map_with(
      [&](const VideoRecord& v) { return draws[std::stoul(v.video_id.substr(1))]; }, videos, "e");
  EXPECT_NEAR(r.aggregate, expected, 0.02);
}

TEST(EvaluateMap, UnlabeledVideosAreRejected) {
  auto v = labeled_video("a", "e", {0, 1});
  v.labels.reset();
  EXPECT_THROW(evaluate_map_with(descending, {v}, "e"), FormatError);
}

TEST(EvaluateMap, ScoringDoesNotModifyParameters) {
  const auto p = init_params<float>(Architecture{}, 1);
  const auto version = p.version();
  Rng rng(7);
  auto v = labeled_video("a", "e", {0, 1, 0, 1, 1});
  for (Index i = 0; i < v.vision.size(); ++i) v.vision.data()[i] = static_cast<float>(rng.normal());
  for (Index i = 0; i < v.audio.size(); ++i) v.audio.data()[i] = static_cast<float>(rng.normal());
  const auto a = evaluate_map(p, {v}, "e");
  const auto b = evaluate_map(p, {v}, "e");
  EXPECT_EQ(p.version(), version);
  EXPECT_EQ(a.to_text(), b.to_text());
}

TEST(EvalReport, TextFormat) {
  EvalReport r{"surf", Metric::kMap, {{"a", 0.5}, {"b", 1.0}}, 0.75};
  EXPECT_EQ(r.to_text(), "# event\tsurf\tmetric\tmAP\na\t0.5\nb\t1\naggregate\t0.75\n");
  EXPECT_EQ(parse_metric("top5map"), Metric::kTop5Map);
  EXPECT_EQ(parse_metric("mAP"), Metric::kMap);
  EXPECT_THROW(parse_metric("auc"), ConfigError);
}

std::vector<ScoredSegment> scored(std::vector<double> s) {
  std::vector<ScoredSegment> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out.push_back({"v", i, double(i), double(i) + 1.0, s[i]});
  }
  return out;
}

TEST(Extract, TopKInTemporalOrder) {
  const auto sel = extract_top_k(scored({0.1, 0.9, 0.5}), 2);
  ASSERT_EQ(sel.segments.size(), 2u);
  EXPECT_EQ(sel.segments[0].segment_index, 1u);
  EXPECT_EQ(sel.segments[1].segment_index, 2u);
  EXPECT_FALSE(sel.clamped);
  const auto all = extract_top_k(scored({0.3, 0.2}), 5);
  EXPECT_TRUE(all.clamped);
  EXPECT_EQ(all.segments.size(), 2u);
  EXPECT_THROW(extract_top_k({}, 1), ShapeError);
}

TEST(Extract, Threshold) {
  const auto sel = extract_above(scored({0.1, 0.9, 0.5, 0.5}), 0.5);
  ASSERT_EQ(sel.segments.size(), 3u);
  EXPECT_EQ(sel.segments[0].segment_index, 1u);
  EXPECT_EQ(sel.segments[2].segment_index, 3u);
  EXPECT_TRUE(extract_above(scored({0.1}), 0.5).segments.empty());
}

TEST(RankOrder, StableDescending) {
  const std::vector<double> s{0.2, 0.9, 0.2, 1.0};
  EXPECT_EQ(rank_order(s), (std::vector<std::size_t>{3, 1, 0, 2}));
}

}  // namespace
}  // namespace mininet
