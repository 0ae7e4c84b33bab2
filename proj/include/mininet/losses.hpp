#pragma once

// Ranking and bag-classification objectives and the exact gradient of their
// sum with respect to every network parameter.

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

#include "mininet/error.hpp"
#include "mininet/model.hpp"
#include "mininet/numkit.hpp"

namespace mininet {

// Which per-bag statistic of the normalized scores each side of the hinge
// uses: <positive bag>-<negative bag>.
enum class RankingVariant { kMaxMax, kMinMin, kMinMax, kMaxMin };

inline std::string_view to_string(RankingVariant v) {
  switch (v) {
    case RankingVariant::kMaxMax: return "max-max";
    case RankingVariant::kMinMin: return "min-min";
    case RankingVariant::kMinMax: return "min-max";
    case RankingVariant::kMaxMin: return "max-min";
  }
  return "?";
}

inline RankingVariant parse_ranking_variant(std::string_view s) {
  for (auto v : {RankingVariant::kMaxMax, RankingVariant::kMinMin, RankingVariant::kMinMax,
                 RankingVariant::kMaxMin}) {
    if (s == to_string(v)) {
      return v;
    }
  }
  throw ConfigError("unknown loss variant '" + std::string(s) +
                    "' (expected max-max, min-min, min-max or max-min)");
}

inline constexpr RankingVariant kAllRankingVariants[] = {
    RankingVariant::kMaxMax, RankingVariant::kMinMin, RankingVariant::kMinMax,
    RankingVariant::kMaxMin};

enum class Statistic { kMax, kMin };

inline Statistic positive_statistic(RankingVariant v) {
  return (v == RankingVariant::kMaxMax || v == RankingVariant::kMaxMin) ? Statistic::kMax
                                                                        : Statistic::kMin;
}

inline Statistic negative_statistic(RankingVariant v) {
  return (v == RankingVariant::kMaxMax || v == RankingVariant::kMinMax) ? Statistic::kMax
                                                                        : Statistic::kMin;
}

// Index of the selected extreme; ties go to the lowest index.
template <class T>
Index select_index(const Vector<T>& scores, Statistic stat) {
  if (scores.size() == 0) {
    throw ShapeError("ranking loss: empty score sequence");
  }
  Index best = 0;
  for (Index i = 1; i < scores.size(); ++i) {
    const bool better =
        stat == Statistic::kMax ? scores[i] > scores[best] : scores[i] < scores[best];
    if (better) {
      best = i;
    }
  }
  return best;
}

// max(0, eps - stat_p(Ep) + stat_n(En)).
template <class T>
double variant_ranking_loss(const Vector<T>& ep, const Vector<T>& en, double eps,
                            RankingVariant variant) {
  const Index ip = select_index(ep, positive_statistic(variant));
  const Index in = select_index(en, negative_statistic(variant));
  return std::max(0.0, eps - static_cast<double>(ep[ip]) + static_cast<double>(en[in]));
}

template <class T>
double mm_ranking_loss(const Vector<T>& ep, const Vector<T>& en, double eps) {
  return variant_ranking_loss(ep, en, eps, RankingVariant::kMaxMax);
}

// Probabilities are clamped to [delta, 1 - delta] before the logarithm.
inline constexpr double kBceClamp = 1e-7;

inline double bce(double y, int label) {
  const double yc = std::clamp(y, kBceClamp, 1.0 - kBceClamp);
  return label == 1 ? -std::log(yc) : -std::log(1.0 - yc);
}

// The same clamped cross-entropy evaluated from the log-probability of the
// true class. -ln is monotone, so clamping the probability equals clamping
// its negative log; this form keeps full precision when p(label) ~ 1.
inline double bce_from_log_prob(double log_prob_true) {
  return std::clamp(-log_prob_true, -std::log1p(-kBceClamp), -std::log(kBceClamp));
}

template <class T>
double bag_bce(const BagForward<T>& fw, int label) {
  return bce_from_log_prob(label == 1 ? fw.log_prob_interest : fw.log_prob_noninterest);
}

struct LossConfig {
  double epsilon = 1.0;
  RankingVariant variant = RankingVariant::kMaxMax;
  bool no_mmrl = false;  // drop the ranking term
  bool no_bcm = false;   // drop both classification terms

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
      throw ConfigError("epsilon must be a finite nonnegative number");
    }
    if (no_mmrl && no_bcm) {
      throw ConfigError("no-mmrl together with no-bcm leaves an empty objective");
    }
  }
};

struct LossBreakdown {
  double mm = 0.0;
  double bce_pos = 0.0;
  double bce_neg = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    mm += o.mm;
    bce_pos += o.bce_pos;
    bce_neg += o.bce_neg;
    total += o.total;
    return *this;
  }
  LossBreakdown& operator/=(double d) {
    mm /= d;
    bce_pos /= d;
    bce_neg /= d;
    total /= d;
    return *this;
  }
};

// Ranking term plus binary cross-entropy of the positive bag against label 1
// and of the negative bag against label 0.
template <class T>
LossBreakdown total_loss(const BagForward<T>& pos, const BagForward<T>& neg,
                         const LossConfig& cfg) {
  cfg.validate();
  LossBreakdown out;
  if (!cfg.no_mmrl) {
    out.mm = variant_ranking_loss(pos.norm_scores, neg.norm_scores, cfg.epsilon, cfg.variant);
  }
  if (!cfg.no_bcm) {
    out.bce_pos = bag_bce(pos, 1);
    out.bce_neg = bag_bce(neg, 0);
  }
  out.total = out.mm + out.bce_pos + out.bce_neg;
  return out;
}

namespace detail {

template <class T>
Matrix<T> relu_mask(const Matrix<T>& activated) {
  return (activated.array() > T(0)).template cast<T>().matrix();
}

template <class T>
Vector<T> relu_mask(const Vector<T>& activated) {
  return (activated.array() > T(0)).template cast<T>().matrix();
}

// d(bce)/d(logits) for a two-logit softmax head; zero inside the clamp.
template <class T>
Vector<T> bce_logit_gradient(const BagForward<T>& fw, int label) {
  Vector<T> g = Vector<T>::Zero(2);
  const double nll = -(label == 1 ? fw.log_prob_interest : fw.log_prob_noninterest);
  if (nll < -std::log1p(-kBceClamp) || nll > -std::log(kBceClamp)) {
    return g;
  }
  const double d = std::exp(fw.log_prob_interest) - static_cast<double>(label);
  g[0] = static_cast<T>(-d);
  g[1] = static_cast<T>(d);
  return g;
}

// Reverse pass through one bag given dL/d(norm_scores) and dL/d(logits).
template <class T>
void accumulate_bag_gradient(const BagForward<T>& fw, const ModelParams<T>& p,
                             const Vector<T>& d_norm, const Vector<T>& d_logits,
                             GradientSet<T>& g) {
  const Index f = p.arch.fused_dim();

  // Classifier head.
  g.cls_b2 += d_logits;
  g.cls_w2.noalias() += d_logits * fw.classifier_hidden.transpose();
  const Vector<T> d_cls_hidden =
      (p.cls_w2.transpose() * d_logits).cwiseProduct(relu_mask(fw.classifier_hidden));
  g.cls_b1 += d_cls_hidden;
  g.cls_w1.noalias() += d_cls_hidden * fw.bag_feature.transpose();
  const Vector<T> d_bag = p.cls_w1.transpose() * d_cls_hidden;

  // Bag feature: f_B = sum_i E_i f_i.
  const Vector<T> d_e = d_norm + fw.fused * d_bag;
  Matrix<T> d_fused = fw.norm_scores * d_bag.transpose();

  // In-bag softmax.
  const T e_dot = fw.norm_scores.dot(d_e);
  const Vector<T> d_raw =
      fw.norm_scores.cwiseProduct(d_e - Vector<T>::Constant(d_e.size(), e_dot));

  // Scorer.
  g.head_b[0] += d_raw.sum();
  g.head_w.noalias() += d_raw.transpose() * fw.score_hidden;
  const Matrix<T> d_score_hidden =
      (d_raw * p.head_w).cwiseProduct(relu_mask(fw.score_hidden));
  g.score_b += d_score_hidden.colwise().sum().transpose();
  g.score_w.noalias() += d_score_hidden.transpose() * fw.fused;
  d_fused.noalias() += d_score_hidden * p.score_w;

  // Fusion: fused = projected + concat_j branch_j(concat).
  Matrix<T> d_projected = d_fused;
  const Index w = p.arch.branch_width();
  for (std::size_t j = 0; j < p.fusion.size(); ++j) {
    const auto& br = p.fusion[j];
    const auto& act = fw.branches[j];
    auto& gb = g.fusion[j];
    const Matrix<T> d_out = d_fused.middleCols(static_cast<Index>(j) * w, w);
    gb.b3 += d_out.colwise().sum().transpose();
    gb.w3.noalias() += d_out.transpose() * act.hidden2;
    const Matrix<T> d_h2 = (d_out * br.w3).cwiseProduct(relu_mask(act.hidden2));
    gb.b2 += d_h2.colwise().sum().transpose();
    gb.w2.noalias() += d_h2.transpose() * act.hidden1;
    const Matrix<T> d_h1 = (d_h2 * br.w2).cwiseProduct(relu_mask(act.hidden1));
    gb.b1 += d_h1.colwise().sum().transpose();
    gb.w1.noalias() += d_h1.transpose() * fw.concat;
    // Only the vision half of the concatenation depends on parameters.
    d_projected.noalias() += d_h1 * br.w1.leftCols(f);
  }

  // Vision projection.
  g.vision_b2 += d_projected.colwise().sum().transpose();
  g.vision_w2.noalias() += d_projected.transpose() * fw.vision_hidden;
  const Matrix<T> d_vh = (d_projected * p.vision_w2).cwiseProduct(relu_mask(fw.vision_hidden));
  g.vision_b1 += d_vh.colwise().sum().transpose();
  g.vision_w1.noalias() += d_vh.transpose() * fw.vision;
}

}  // namespace detail

// Exact gradient of total_loss(pos, neg, cfg). Hinge and extreme selections
// use subgradient 0 at the kink and route through the lowest-index extreme;
// the in-bag softmax Jacobian is applied in full.
template <class T>
GradientSet<T> backward(const BagForward<T>& pos, const BagForward<T>& neg,
                        const ModelParams<T>& p, const LossConfig& cfg) {
  cfg.validate();
  if (pos.params_version != p.version() || neg.params_version != p.version()) {
    throw Error("backward: forward caches were computed with different parameters");
  }
  auto g = GradientSet<T>::zeros_like(p);

  Vector<T> d_norm_p = Vector<T>::Zero(pos.norm_scores.size());
  Vector<T> d_norm_n = Vector<T>::Zero(neg.norm_scores.size());
  if (!cfg.no_mmrl) {
    const Index ip = select_index(pos.norm_scores, positive_statistic(cfg.variant));
    const Index in = select_index(neg.norm_scores, negative_statistic(cfg.variant));
    const double arg = cfg.epsilon - static_cast<double>(pos.norm_scores[ip]) +
                       static_cast<double>(neg.norm_scores[in]);
    if (arg > 0.0) {
      d_norm_p[ip] = T(-1);
      d_norm_n[in] = T(1);
    }
  }
  Vector<T> d_logits_p = Vector<T>::Zero(2);
  Vector<T> d_logits_n = Vector<T>::Zero(2);
  if (!cfg.no_bcm) {
    d_logits_p = detail::bce_logit_gradient(pos, 1);
    d_logits_n = detail::bce_logit_gradient(neg, 0);
  }
  detail::accumulate_bag_gradient(pos, p, d_norm_p, d_logits_p, g);
  detail::accumulate_bag_gradient(neg, p, d_norm_n, d_logits_n, g);
  return g;
}

}  // namespace mininet
