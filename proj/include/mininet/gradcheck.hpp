#pragma once

// Comparison of backward() against the central-difference oracle on
// reduced shapes, in double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "mininet/losses.hpp"
#include "mininet/model.hpp"
#include "mininet/numkit.hpp"
#include "mininet/rng.hpp"

namespace mininet {

struct GradCheckCase {
  std::uint64_t seed = 42;
  Architecture arch = Architecture::toy();
  Index bag_size = 5;
  LossConfig loss;
  Ablation ablation;
  // At 1e-3 the central-difference truncation error alone reaches ~3e-3
  // relative on these shapes; 1e-4 balances it against round-off.
  double step = 1e-4;
  // Test hook: added to the first analytic gradient entry to prove the
  // comparison can fail.
  double perturb_analytic = 0.0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::vector<std::string> offending;  // tensors above the threshold
};

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
// derivative is ~0 from turning round-off into huge ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

// Signature of the smooth piece of the loss surface a forward pair lies on:
// every ReLU on/off state, the selected ranking extremes, whether the hinge
// and each clamp are active.
template <class T>
std::vector<std::uint8_t> loss_regime(const BagForward<T>& pos, const BagForward<T>& neg,
                                      const LossConfig& cfg) {
  std::vector<std::uint8_t> sig;
  const auto add_mask = [&](const auto& m) {
    for (Index i = 0; i < m.size(); ++i) {
      sig.push_back(m.data()[i] > T(0) ? 1 : 0);
    }
  };
  for (const auto* fw : {&pos, &neg}) {
    add_mask(fw->vision_hidden);
    for (const auto& br : fw->branches) {
      add_mask(br.hidden1);
      add_mask(br.hidden2);
    }
    add_mask(fw->score_hidden);
    add_mask(fw->classifier_hidden);
  }
  const Index ip = select_index(pos.norm_scores, positive_statistic(cfg.variant));
  const Index in = select_index(neg.norm_scores, negative_statistic(cfg.variant));
  sig.push_back(static_cast<std::uint8_t>(ip));
  sig.push_back(static_cast<std::uint8_t>(in));
  sig.push_back(variant_ranking_loss(pos.norm_scores, neg.norm_scores, cfg.epsilon,
                                     cfg.variant) > 0.0);
  const auto clamp_state = [](double nll) -> std::uint8_t {
    if (nll < -std::log1p(-kBceClamp)) {
      return 0;
    }
    return nll > -std::log(kBceClamp) ? 2 : 1;
  };
  sig.push_back(clamp_state(-pos.log_prob_interest));
  sig.push_back(clamp_state(-neg.log_prob_noninterest));
  return sig;
}

// Deterministic toy bag: standard-normal features from the kToyData stream.
inline Bag<double> toy_bag(Rng& rng, const Architecture& arch, Index n, Polarity polarity) {
  Bag<double> bag;
  bag.vision.resize(n, arch.vision_dim);
  bag.audio.resize(n, arch.audio_dim);
  for (Index i = 0; i < bag.vision.size(); ++i) {
    bag.vision.data()[i] = rng.normal();
  }
  for (Index i = 0; i < bag.audio.size(); ++i) {
    bag.audio.data()[i] = rng.normal();
  }
  bag.polarity = polarity;
  bag.source_video = polarity == Polarity::kPositive ? "toy-pos" : "toy-neg";
  for (Index i = 0; i < n; ++i) {
    bag.instance_indices.push_back(static_cast<std::size_t>(i));
  }
  return bag;
}

inline GradCheckResult run_gradient_check(const GradCheckCase& c,
                                          double threshold = 1e-4) {
  c.loss.validate();
  c.ablation.validate();
  auto params = init_params<double>(c.arch, c.seed);
  Rng rng(c.seed, Stream::kToyData);
  // Zero biases put every all-zero hidden row exactly on the next ReLU's
  // kink, where central differences see half a slope. Random biases move
  // the probe point off the kinks.
  params.for_each_tensor([&](const std::string&, auto& m) {
    if constexpr (std::decay_t<decltype(m)>::ColsAtCompileTime == 1) {
      for (Index i = 0; i < m.size(); ++i) {
        m[i] = rng.uniform(-0.1, 0.1);
      }
    }
  });
  params.mark_modified();
  const auto pos = toy_bag(rng, c.arch, c.bag_size, Polarity::kPositive);
  const auto neg = toy_bag(rng, c.arch, c.bag_size, Polarity::kNegative);

  auto analytic = backward(forward_bag(pos, params, c.ablation),
                           forward_bag(neg, params, c.ablation), params, c.loss);
  if (c.perturb_analytic != 0.0) {
    analytic.vision_w1.data()[0] += c.perturb_analytic;
  }

  const auto loss_fn = [&](const ModelParams<double>& p) {
    return total_loss(forward_bag(pos, p, c.ablation), forward_bag(neg, p, c.ablation), c.loss)
        .total;
  };
  const auto regime_fn = [&](const ModelParams<double>& p) {
    return loss_regime(forward_bag(pos, p, c.ablation), forward_bag(neg, p, c.ablation), c.loss);
  };
  const auto numeric = finite_diff_gradient(loss_fn, params, c.step, regime_fn);

  GradCheckResult result;
  const auto av = analytic.views();
  const auto nv = numeric.views();
  for (std::size_t t = 0; t < av.size(); ++t) {
    double tensor_max = 0.0;
    for (std::size_t i = 0; i < av[t].values.size(); ++i) {
      tensor_max = std::max(tensor_max, relative_error(av[t].values[i], nv[t].values[i]));
    }
    if (tensor_max > result.max_relative_error) {
      result.max_relative_error = tensor_max;
      result.worst_tensor = av[t].name;
    }
    if (!(tensor_max < threshold)) {
      result.offending.push_back(av[t].name);
    }
  }
  return result;
}

}  // namespace mininet
