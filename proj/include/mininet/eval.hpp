#pragma once

// Segment scoring, average precision, per-event mAP and top-5 mAP reports,
// and highlight extraction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mininet/data.hpp"
#include "mininet/error.hpp"
#include "mininet/model.hpp"
#include "mininet/numkit.hpp"
#include "mininet/parallel.hpp"

namespace mininet {

struct ScoredSegment {
  std::string video_id;
  std::size_t segment_index = 0;
  double start_s = 0.0;
  double end_s = 1.0;
  double score = 0.0;

  friend bool operator==(const ScoredSegment&, const ScoredSegment&) = default;
};

// Segment i covers [i, i + 1) seconds.
template <class T>
std::vector<ScoredSegment> score_segments(const VideoRecord& video, const ModelParams<T>& p,
                                          const Ablation& ablation = {}) {
  const auto raw = score_video<T>(video.vision.template cast<T>(), video.audio.template cast<T>(),
                                  p, ablation);
  std::vector<ScoredSegment> out;
  out.reserve(static_cast<std::size_t>(raw.size()));
  for (Index i = 0; i < raw.size(); ++i) {
    const double start = static_cast<double>(i);
    out.push_back(ScoredSegment{video.video_id, static_cast<std::size_t>(i), start, start + 1.0,
                                static_cast<double>(raw[i])});
  }
  return out;
}

// Indices by descending score, ties by ascending index.
inline std::vector<std::size_t> rank_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

namespace detail {

inline void check_ranking_inputs(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) {
    throw ShapeError("average precision: " + std::to_string(labels.size()) + " labels vs " +
                     std::to_string(scores.size()) + " scores");
  }
  if (labels.empty()) {
    throw ShapeError("average precision: empty sequence");
  }
}

// Sum of precision@r over positive ranks r <= limit, and the positive count.
inline std::pair<double, std::size_t> precision_sum(std::span<const int> labels,
                                                    std::span<const double> scores,
                                                    std::size_t limit) {
  const auto order = rank_order(scores);
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < std::min(limit, order.size()); ++r) {
    if (labels[order[r]] != 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return {sum, hits};
}

inline std::size_t count_positives(std::span<const int> labels) {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; }));
}

}  // namespace detail

// (1/P) * sum of precision@r over the ranks r holding a positive; 0 when
// there are no positives. Nonzero labels count as positive.
inline double average_precision(std::span<const int> labels, std::span<const double> scores) {
  detail::check_ranking_inputs(labels, scores);
  const std::size_t positives = detail::count_positives(labels);
  if (positives == 0) {
    return 0.0;
  }
  return detail::precision_sum(labels, scores, labels.size()).first /
         static_cast<double>(positives);
}

// Average precision over the top k ranks, normalized by min(P, k).
inline double ap_at_k(std::span<const int> labels, std::span<const double> scores,
                      std::size_t k) {
  detail::check_ranking_inputs(labels, scores);
  if (k < 1) {
    throw ConfigError("ap_at_k: k must be at least 1");
  }
  const std::size_t positives = detail::count_positives(labels);
  if (positives == 0) {
    return 0.0;
  }
  return detail::precision_sum(labels, scores, k).first /
         static_cast<double>(std::min(positives, k));
}

// Marks the ceil(n / 2) most important segments positive; equal importance
// is resolved toward the earlier segment.
inline std::vector<int> binarize_importance(std::span<const int> importance) {
  std::vector<double> as_scores(importance.begin(), importance.end());
  const auto order = rank_order(as_scores);
  std::vector<int> out(importance.size(), 0);
  for (std::size_t r = 0; r < (importance.size() + 1) / 2; ++r) {
    out[order[r]] = 1;
  }
  return out;
}

enum class Metric { kMap, kTop5Map };

inline std::string_view to_string(Metric m) { return m == Metric::kMap ? "mAP" : "top5-mAP"; }

inline Metric parse_metric(std::string_view s) {
  if (s == "map" || s == "mAP") {
    return Metric::kMap;
  }
  if (s == "top5map" || s == "top5-mAP") {
    return Metric::kTop5Map;
  }
  throw ConfigError("unknown metric '" + std::string(s) + "' (expected map or top5map)");
}

struct EvalReport {
  std::string event;
  Metric metric = Metric::kMap;
  std::vector<std::pair<std::string, double>> per_video;
  double aggregate = 0.0;

  // Header line, then `video_id <TAB> ap`, then `aggregate <TAB> value`.
  std::string to_text() const {
    std::string out = "# event\t" + event + "\tmetric\t" + std::string(to_string(metric)) + '\n';
    for (const auto& [id, ap] : per_video) {
      out += id + '\t' + io::format_double(ap) + '\n';
    }
    out += "aggregate\t" + io::format_double(aggregate) + '\n';
    return out;
  }
};

namespace detail {

inline double mean_of(const std::vector<std::pair<std::string, double>>& per_video) {
  double sum = 0.0;
  for (const auto& pv : per_video) {
    sum += pv.second;
  }
  return sum / static_cast<double>(per_video.size());
}

inline std::vector<const VideoRecord*> event_videos(const std::vector<VideoRecord>& videos,
                                                    const std::string& event) {
  std::vector<const VideoRecord*> out;
  for (const auto& v : videos) {
    if (v.event_tag == event) {
      out.push_back(&v);
    }
  }
  if (out.empty()) {
    throw ConfigError("event '" + event + "': no test videos");
  }
  return out;
}

}  // namespace detail

// Per-video AP of `scorer(video)` against binary labels, averaged over the
// videos of `event`. The scorer returns one score per segment.
template <class Scorer>
EvalReport evaluate_map_with(Scorer&& scorer, const std::vector<VideoRecord>& videos,
                             const std::string& event, std::size_t threads = 1) {
  const auto selected = detail::event_videos(videos, event);
  for (const auto* v : selected) {
    if (!v->labels) {
      throw FormatError("video '" + v->video_id + "' has no labels");
    }
  }
  EvalReport report{event, Metric::kMap, {}, 0.0};
  report.per_video.resize(selected.size());
  parallel_for(selected.size(), threads, [&](std::size_t i) {
    const VideoRecord& v = *selected[i];
    const std::vector<double> scores = scorer(v);
    report.per_video[i] = {v.video_id, average_precision(*v.labels, scores)};
  });
  report.aggregate = detail::mean_of(report.per_video);
  return report;
}

template <class T>
std::vector<double> segment_scores(const VideoRecord& v, const ModelParams<T>& p,
                                   const Ablation& ablation) {
  std::vector<double> out;
  for (const auto& s : score_segments(v, p, ablation)) {
    out.push_back(s.score);
  }
  return out;
}

template <class T>
EvalReport evaluate_map(const ModelParams<T>& p, const std::vector<VideoRecord>& videos,
                        const std::string& event, const Ablation& ablation = {},
                        std::size_t threads = 1) {
  return evaluate_map_with([&](const VideoRecord& v) { return segment_scores(v, p, ablation); },
                           videos, event, threads);
}

// How top-5 ground truth is read from a video's label files.
//   kImportance: one file of annotator importance scores, top half positive.
//   kSummaries:  one binary file per human summary; APs are averaged.
//   kAuto:       kSummaries with several files, kImportance with one.
enum class SummaryMode { kAuto, kImportance, kSummaries };

inline SummaryMode parse_summary_mode(std::string_view s) {
  if (s == "auto") return SummaryMode::kAuto;
  if (s == "importance") return SummaryMode::kImportance;
  if (s == "summaries") return SummaryMode::kSummaries;
  throw ConfigError("unknown summary mode '" + std::string(s) +
                    "' (expected auto, importance or summaries)");
}

inline constexpr std::size_t kTopK = 5;

inline double top5_video_ap(const VideoRecord& v, std::span<const double> scores,
                            SummaryMode mode) {
  if (v.summaries.empty()) {
    throw FormatError("video '" + v.video_id + "' has no summary labels");
  }
  if (mode == SummaryMode::kAuto) {
    mode = v.summaries.size() > 1 ? SummaryMode::kSummaries : SummaryMode::kImportance;
  }
  if (mode == SummaryMode::kImportance) {
    return ap_at_k(binarize_importance(v.summaries.front()), scores, kTopK);
  }
  double sum = 0.0;
  for (const auto& s : v.summaries) {
    sum += ap_at_k(s, scores, kTopK);
  }
  return sum / static_cast<double>(v.summaries.size());
}

template <class Scorer>
EvalReport evaluate_top5_map_with(Scorer&& scorer, const std::vector<VideoRecord>& videos,
                                  const std::string& event, SummaryMode mode = SummaryMode::kAuto,
                                  std::size_t threads = 1) {
  const auto selected = detail::event_videos(videos, event);
  for (const auto* v : selected) {
    if (v->summaries.empty()) {
      throw FormatError("video '" + v->video_id + "' has no summary labels");
    }
  }
  EvalReport report{event, Metric::kTop5Map, {}, 0.0};
  report.per_video.resize(selected.size());
  parallel_for(selected.size(), threads, [&](std::size_t i) {
    const VideoRecord& v = *selected[i];
    const std::vector<double> scores = scorer(v);
    report.per_video[i] = {v.video_id, top5_video_ap(v, scores, mode)};
  });
  report.aggregate = detail::mean_of(report.per_video);
  return report;
}

template <class T>
EvalReport evaluate_top5_map(const ModelParams<T>& p, const std::vector<VideoRecord>& videos,
                             const std::string& event, SummaryMode mode = SummaryMode::kAuto,
                             const Ablation& ablation = {}, std::size_t threads = 1) {
  return evaluate_top5_map_with(
      [&](const VideoRecord& v) { return segment_scores(v, p, ablation); }, videos, event, mode,
      threads);
}

struct HighlightSelection {
  std::vector<ScoredSegment> segments;  // temporal order
  bool clamped = false;                 // k exceeded the segment count
};

// The k highest-scoring segments (ties toward the earlier segment), returned
// in temporal order.
inline HighlightSelection extract_top_k(const std::vector<ScoredSegment>& scores, std::size_t k) {
  if (scores.empty()) {
    throw ShapeError("extract_highlights: no segments");
  }
  HighlightSelection out;
  out.clamped = k > scores.size();
  k = std::min(k, scores.size());
  std::vector<double> s;
  for (const auto& seg : scores) {
    s.push_back(seg.score);
  }
  auto order = rank_order(s);
  order.resize(k);
  std::sort(order.begin(), order.end());
  for (auto i : order) {
    out.segments.push_back(scores[i]);
  }
  return out;
}

// Every segment scoring at least `threshold`, in temporal order.
inline HighlightSelection extract_above(const std::vector<ScoredSegment>& scores,
                                        double threshold) {
  if (scores.empty()) {
    throw ShapeError("extract_highlights: no segments");
  }
  HighlightSelection out;
  for (const auto& seg : scores) {
    if (seg.score >= threshold) {
      out.segments.push_back(seg);
    }
  }
  return out;
}

}  // namespace mininet
