#pragma once

// Forward pass of the multiple-instance ranking network.
//
//   vision (Dv) --FC-ReLU-FC--> projected (F) --+------------------+--> fused (F)
//                                               |                  |
//   audio  (F)  ------------------------ concat (2F) -> k branches -+ (residual)
//
//   fused -> W_H relu(W_S f + b_S) + b_H             raw score per instance
//   softmax over the bag                              normalized score
//   sum_i score_i * fused_i -> FC-ReLU-FC -> softmax  interest probability
//
// F is the audio width (128 with the default architecture); each fusion
// branch is FC-ReLU-FC-ReLU-FC and emits F / k coordinates.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mininet/error.hpp"
#include "mininet/numkit.hpp"
#include "mininet/rng.hpp"

namespace mininet {

struct Architecture {
  Index vision_dim = 512;
  Index audio_dim = 128;
  Index vision_hidden = 256;
  Index fusion_hidden = 128;
  Index branches = 4;
  Index score_dim = 64;
  Index classifier_hidden = 64;

  // Width of the projected vision feature, the fused feature and the bag
  // feature. It equals the audio width so that vision and audio can be
  // concatenated symmetrically and the residual sum is defined.
  Index fused_dim() const { return audio_dim; }
  Index branch_width() const { return fused_dim() / branches; }

  void validate() const {
    const Index dims[] = {vision_dim, audio_dim, vision_hidden, fusion_hidden,
                          branches, score_dim, classifier_hidden};
    for (Index d : dims) {
      if (d < 1) {
        throw ConfigError("architecture: every width must be positive");
      }
    }
    if (fused_dim() % branches != 0) {
      throw ConfigError("architecture: branch count " + std::to_string(branches) +
                        " does not divide fused width " + std::to_string(fused_dim()));
    }
  }

  // Reduced shapes used for finite-difference gradient checks.
  static Architecture toy() {
    return Architecture{.vision_dim = 8,
                        .audio_dim = 4,
                        .vision_hidden = 6,
                        .fusion_hidden = 5,
                        .branches = 2,
                        .score_dim = 3,
                        .classifier_hidden = 3};
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// Modality ablations. no_audio zeroes the audio input and no_vision the
// vision input, so the fusion stack keeps its parameter count but sees only
// the remaining modality.
struct Ablation {
  bool no_audio = false;
  bool no_vision = false;

  void validate() const {
    if (no_audio && no_vision) {
      throw ConfigError("ablation: cannot remove both audio and vision");
    }
  }
};

namespace detail {
inline std::uint64_t next_params_version() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

template <class T>
struct FusionBranch {
  Matrix<T> w1;
  Vector<T> b1;
  Matrix<T> w2;
  Vector<T> b2;
  Matrix<T> w3;
  Vector<T> b3;
};

// Every learnable tensor of the network, in a fixed enumeration order.
template <class T>
struct TensorSet {
  Architecture arch;
  Matrix<T> vision_w1;
  Vector<T> vision_b1;
  Matrix<T> vision_w2;
  Vector<T> vision_b2;
  std::vector<FusionBranch<T>> fusion;
  Matrix<T> score_w;  // W_S, projects the fused feature into the score subspace
  Vector<T> score_b;
  Matrix<T> head_w;   // W_H, 1 x score_dim
  Vector<T> head_b;
  Matrix<T> cls_w1;
  Vector<T> cls_b1;
  Matrix<T> cls_w2;  // 2 x classifier_hidden; row 1 is the interest class
  Vector<T> cls_b2;

  static TensorSet zeros(const Architecture& a) {
    a.validate();
    TensorSet s;
    s.arch = a;
    const Index f = a.fused_dim();
    s.vision_w1 = Matrix<T>::Zero(a.vision_hidden, a.vision_dim);
    s.vision_b1 = Vector<T>::Zero(a.vision_hidden);
    s.vision_w2 = Matrix<T>::Zero(f, a.vision_hidden);
    s.vision_b2 = Vector<T>::Zero(f);
    s.fusion.resize(static_cast<std::size_t>(a.branches));
    for (auto& br : s.fusion) {
      br.w1 = Matrix<T>::Zero(a.fusion_hidden, 2 * f);
      br.b1 = Vector<T>::Zero(a.fusion_hidden);
      br.w2 = Matrix<T>::Zero(a.fusion_hidden, a.fusion_hidden);
      br.b2 = Vector<T>::Zero(a.fusion_hidden);
      br.w3 = Matrix<T>::Zero(a.branch_width(), a.fusion_hidden);
      br.b3 = Vector<T>::Zero(a.branch_width());
    }
    s.score_w = Matrix<T>::Zero(a.score_dim, f);
    s.score_b = Vector<T>::Zero(a.score_dim);
    s.head_w = Matrix<T>::Zero(1, a.score_dim);
    s.head_b = Vector<T>::Zero(1);
    s.cls_w1 = Matrix<T>::Zero(a.classifier_hidden, f);
    s.cls_b1 = Vector<T>::Zero(a.classifier_hidden);
    s.cls_w2 = Matrix<T>::Zero(2, a.classifier_hidden);
    s.cls_b2 = Vector<T>::Zero(2);
    return s;
  }

  template <class F>
  void for_each_tensor(F&& f) {
    for_each_impl(*this, f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    for_each_impl(*this, f);
  }

  std::vector<TensorView<T>> views() {
    std::vector<TensorView<T>> out;
    for_each_tensor([&](const std::string& name, auto& m) {
      out.push_back({name, std::span<T>(m.data(), static_cast<std::size_t>(m.size())),
                     m.rows(), m.cols()});
    });
    return out;
  }

  std::vector<TensorView<const T>> views() const {
    std::vector<TensorView<const T>> out;
    for_each_tensor([&](const std::string& name, const auto& m) {
      out.push_back({name,
                     std::span<const T>(m.data(), static_cast<std::size_t>(m.size())),
                     m.rows(), m.cols()});
    });
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, const auto& m) {
      n += static_cast<std::size_t>(m.size());
    });
    return n;
  }

  bool same_shape(const TensorSet& other) const {
    if (arch != other.arch) {
      return false;
    }
    const auto a = views();
    const auto b = other.views();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].rows != b[i].rows || a[i].cols != b[i].cols) {
        return false;
      }
    }
    return true;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const std::string&, const auto& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  friend bool operator==(const TensorSet& a, const TensorSet& b) {
    if (!a.same_shape(b)) {
      return false;
    }
    const auto va = a.views();
    const auto vb = b.views();
    for (std::size_t i = 0; i < va.size(); ++i) {
      if (!std::equal(va[i].values.begin(), va[i].values.end(), vb[i].values.begin())) {
        return false;
      }
    }
    return true;
  }

 protected:
  template <class Self, class F>
  static void for_each_impl(Self& s, F& f) {
    f("vision.fc1.weight", s.vision_w1);
    f("vision.fc1.bias", s.vision_b1);
    f("vision.fc2.weight", s.vision_w2);
    f("vision.fc2.bias", s.vision_b2);
    for (std::size_t j = 0; j < s.fusion.size(); ++j) {
      const std::string p = "fusion." + std::to_string(j) + ".";
      f(p + "fc1.weight", s.fusion[j].w1);
      f(p + "fc1.bias", s.fusion[j].b1);
      f(p + "fc2.weight", s.fusion[j].w2);
      f(p + "fc2.bias", s.fusion[j].b2);
      f(p + "fc3.weight", s.fusion[j].w3);
      f(p + "fc3.bias", s.fusion[j].b3);
    }
    f("score.subspace.weight", s.score_w);
    f("score.subspace.bias", s.score_b);
    f("score.head.weight", s.head_w);
    f("score.head.bias", s.head_b);
    f("classifier.fc1.weight", s.cls_w1);
    f("classifier.fc1.bias", s.cls_b1);
    f("classifier.fc2.weight", s.cls_w2);
    f("classifier.fc2.bias", s.cls_b2);
  }
};

template <class T>
struct GradientSet : TensorSet<T> {
  using scalar_type = T;
  using gradient_type = GradientSet<T>;

  static GradientSet zeros_like(const TensorSet<T>& shape) {
    GradientSet g;
    static_cast<TensorSet<T>&>(g) = TensorSet<T>::zeros(shape.arch);
    return g;
  }

  GradientSet& operator+=(const GradientSet& o) {
    auto a = this->views();
    const auto b = o.views();
    for (std::size_t t = 0; t < a.size(); ++t) {
      for (std::size_t i = 0; i < a[t].values.size(); ++i) {
        a[t].values[i] += b[t].values[i];
      }
    }
    return *this;
  }

  GradientSet& operator*=(T s) {
    this->for_each_tensor([&](const std::string&, auto& m) { m *= s; });
    return *this;
  }
};

// Learnable state. Carries a version token that changes whenever the values
// are changed through mark_modified(); forward passes record it so that a
// backward pass against different parameters is rejected.
template <class T>
struct ModelParams : TensorSet<T> {
  using scalar_type = T;
  using gradient_type = GradientSet<T>;

  ModelParams() = default;
  explicit ModelParams(TensorSet<T> tensors)
      : TensorSet<T>(std::move(tensors)), version_(detail::next_params_version()) {}

  static ModelParams zeros(const Architecture& a) {
    return ModelParams(TensorSet<T>::zeros(a));
  }

  std::uint64_t version() const { return version_; }
  void mark_modified() { version_ = detail::next_params_version(); }

  template <class U>
  ModelParams<U> cast() const {
    auto out = ModelParams<U>::zeros(this->arch);
    auto dst = out.views();
    const auto src = this->views();
    for (std::size_t t = 0; t < src.size(); ++t) {
      for (std::size_t i = 0; i < src[t].values.size(); ++i) {
        dst[t].values[i] = static_cast<U>(src[t].values[i]);
      }
    }
    out.mark_modified();
    return out;
  }

 private:
  std::uint64_t version_ = 0;
};

// Weights uniform on [-sqrt(6 / fan_in), +sqrt(6 / fan_in)], drawn in tensor
// enumeration order and row-major within a tensor from the kInit stream of
// `seed`; biases zero. Values are drawn in double and rounded to T, so the
// float and double models of one seed agree to float rounding.
template <class T = float>
ModelParams<T> init_params(const Architecture& arch, std::uint64_t seed) {
  auto params = ModelParams<T>::zeros(arch);
  Rng rng(seed, Stream::kInit);
  params.for_each_tensor([&](const std::string&, auto& m) {
    if constexpr (std::decay_t<decltype(m)>::ColsAtCompileTime == 1) {
      return;  // bias
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) {
      m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
  });
  params.mark_modified();
  return params;
}

// One 1-second segment.
template <class T = float>
struct SegmentFeatures {
  Vector<T> vision;
  Vector<T> audio;
};

enum class Polarity { kNegative = 0, kPositive = 1 };

// N instances, one per row of `vision` and `audio`.
template <class T = float>
struct Bag {
  Matrix<T> vision;
  Matrix<T> audio;
  Polarity polarity = Polarity::kPositive;
  std::string source_video;
  std::vector<std::size_t> instance_indices;

  Index size() const { return vision.rows(); }
};

template <class T>
struct BranchActivations {
  Matrix<T> hidden1;
  Matrix<T> hidden2;
};

// Everything produced by one bag's forward pass, including the activations
// backward() needs.
template <class T>
struct BagForward {
  Matrix<T> vision;       // inputs after ablation masking
  Matrix<T> concat;       // [projected, audio]
  Matrix<T> vision_hidden;
  Matrix<T> projected;    // f_v hat
  std::vector<BranchActivations<T>> branches;
  Matrix<T> fused;        // f^i, one row per instance
  Matrix<T> score_hidden; // relu(W_S f + b_S)
  Vector<T> raw_scores;   // E hat
  Vector<T> norm_scores;  // E
  Vector<T> bag_feature;  // f_B
  Vector<T> classifier_hidden;
  Vector<T> logits;
  double log_prob_interest = -std::log(2.0);      // log p(interest)
  double log_prob_noninterest = -std::log(2.0);   // log p(non-interest)
  T event_prob = T(0.5);  // probability of the interest class
  std::uint64_t params_version = 0;
};

namespace detail {

inline void check_cols(Index got, Index want, const char* what) {
  if (got != want) {
    throw ShapeError(std::string(what) + ": expected width " + std::to_string(want) +
                     ", got " + std::to_string(got));
  }
}

}  // namespace detail

// f_v hat = FC2(relu(FC1(f_v))).
template <class T>
Vector<T> project_vision(const Vector<T>& vision, const ModelParams<T>& p) {
  detail::check_cols(vision.size(), p.arch.vision_dim, "project_vision");
  return linear(p.vision_w2, p.vision_b2, relu(linear(p.vision_w1, p.vision_b1, vision)));
}

// f = f_v hat + concat_j branch_j([f_v hat, f_a]).
template <class T>
Vector<T> fuse(const Vector<T>& projected, const Vector<T>& audio, const ModelParams<T>& p) {
  const Index f = p.arch.fused_dim();
  detail::check_cols(projected.size(), f, "fuse (vision)");
  detail::check_cols(audio.size(), f, "fuse (audio)");
  Vector<T> concat(2 * f);
  concat << projected, audio;
  Vector<T> out = projected;
  const Index w = p.arch.branch_width();
  for (std::size_t j = 0; j < p.fusion.size(); ++j) {
    const auto& br = p.fusion[j];
    Vector<T> h = relu(linear(br.w1, br.b1, concat));
    h = relu(linear(br.w2, br.b2, h));
    out.segment(static_cast<Index>(j) * w, w) += linear(br.w3, br.b3, h);
  }
  return out;
}

// E hat = W_H relu(W_S f + b_S) + b_H.
template <class T>
T initial_score(const Vector<T>& fused, const ModelParams<T>& p) {
  detail::check_cols(fused.size(), p.arch.fused_dim(), "initial_score");
  return linear(p.head_w, p.head_b, relu(linear(p.score_w, p.score_b, fused)))[0];
}

template <class T>
Vector<T> normalize_scores(const Vector<T>& raw) {
  if (raw.size() == 0) {
    throw ShapeError("normalize_scores: empty bag");
  }
  return stable_softmax(raw);
}

// f_B = sum_i norm[i] * fused.row(i).
template <class T>
Vector<T> bag_feature(const Vector<T>& norm, const Matrix<T>& fused) {
  if (norm.size() != fused.rows()) {
    throw ShapeError("bag_feature: " + std::to_string(norm.size()) + " weights for " +
                     std::to_string(fused.rows()) + " instances");
  }
  Vector<T> out = Vector<T>::Zero(fused.cols());
  for (Index d = 0; d < fused.cols(); ++d) {
    double acc = 0.0;
    for (Index i = 0; i < fused.rows(); ++i) {
      acc += static_cast<double>(norm[i]) * static_cast<double>(fused(i, d));
    }
    out[d] = static_cast<T>(acc);
  }
  return out;
}

// Classifier logits over {non-interest = 0, interest = 1}.
template <class T>
Vector<T> classifier_logits(const Vector<T>& bag_feat, const ModelParams<T>& p,
                            Vector<T>* hidden = nullptr) {
  detail::check_cols(bag_feat.size(), p.arch.fused_dim(), "classify_bag");
  Vector<T> h = relu(linear(p.cls_w1, p.cls_b1, bag_feat));
  Vector<T> logits = linear(p.cls_w2, p.cls_b2, h);
  if (hidden != nullptr) {
    *hidden = std::move(h);
  }
  return logits;
}

// Probability of the interest class.
template <class T>
T classify_bag(const Vector<T>& bag_feat, const ModelParams<T>& p) {
  return stable_softmax(classifier_logits(bag_feat, p))[1];
}

namespace detail {

template <class T>
std::pair<Matrix<T>, Matrix<T>> masked_inputs(const Matrix<T>& vision, const Matrix<T>& audio,
                                              const Architecture& arch,
                                              const Ablation& ablation) {
  ablation.validate();
  if (vision.rows() != audio.rows()) {
    throw ShapeError("bag: " + std::to_string(vision.rows()) + " vision rows vs " +
                     std::to_string(audio.rows()) + " audio rows");
  }
  if (vision.rows() == 0) {
    throw ShapeError("bag: no instances");
  }
  check_cols(vision.cols(), arch.vision_dim, "vision features");
  check_cols(audio.cols(), arch.audio_dim, "audio features");
  return {ablation.no_vision ? Matrix<T>::Zero(vision.rows(), vision.cols()).eval() : vision,
          ablation.no_audio ? Matrix<T>::Zero(audio.rows(), audio.cols()).eval() : audio};
}

// Batched fused features and raw scores; fills the caches of `out`.
template <class T>
void forward_instances(const Matrix<T>& vision, const Matrix<T>& audio,
                       const ModelParams<T>& p, BagForward<T>& out) {
  const Index f = p.arch.fused_dim();
  const Index n = vision.rows();
  out.vision_hidden = linear_rows(vision, p.vision_w1, p.vision_b1);
  relu_inplace(out.vision_hidden);
  out.projected = linear_rows(out.vision_hidden, p.vision_w2, p.vision_b2);

  out.concat.resize(n, 2 * f);
  out.concat.leftCols(f) = out.projected;
  out.concat.rightCols(f) = audio;

  out.fused = out.projected;
  const Index w = p.arch.branch_width();
  out.branches.resize(p.fusion.size());
  for (std::size_t j = 0; j < p.fusion.size(); ++j) {
    const auto& br = p.fusion[j];
    auto& act = out.branches[j];
    act.hidden1 = linear_rows(out.concat, br.w1, br.b1);
    relu_inplace(act.hidden1);
    act.hidden2 = linear_rows(act.hidden1, br.w2, br.b2);
    relu_inplace(act.hidden2);
    out.fused.middleCols(static_cast<Index>(j) * w, w) += linear_rows(act.hidden2, br.w3, br.b3);
  }

  out.score_hidden = linear_rows(out.fused, p.score_w, p.score_b);
  relu_inplace(out.score_hidden);
  out.raw_scores = linear_rows(out.score_hidden, p.head_w, p.head_b).col(0);
}

}  // namespace detail

// Full forward pass over one bag: per-instance fusion and scoring, in-bag
// normalization, score-weighted bag feature and event probability.
template <class T>
BagForward<T> forward_bag(const Bag<T>& bag, const ModelParams<T>& p,
                          const Ablation& ablation = {}) {
  auto [vision, audio] = detail::masked_inputs(bag.vision, bag.audio, p.arch, ablation);
  BagForward<T> out;
  out.params_version = p.version();
  detail::forward_instances(vision, audio, p, out);
  out.vision = std::move(vision);
  out.norm_scores = normalize_scores(out.raw_scores);
  out.bag_feature = bag_feature(out.norm_scores, out.fused);
  out.logits = classifier_logits(out.bag_feature, p, &out.classifier_hidden);
  const double l0 = static_cast<double>(out.logits[0]);
  const double l1 = static_cast<double>(out.logits[1]);
  const double top = std::max(l0, l1);
  const double lse = top + std::log(std::exp(l0 - top) + std::exp(l1 - top));
  out.log_prob_noninterest = l0 - lse;
  out.log_prob_interest = l1 - lse;
  out.event_prob = static_cast<T>(std::exp(out.log_prob_interest));
  if (!out.raw_scores.allFinite() || !std::isfinite(static_cast<double>(out.event_prob))) {
    throw NumericError("forward_bag: non-finite output");
  }
  return out;
}

// Raw score E hat for every segment of a video, each segment scored on its
// own. Ranking by raw scores equals ranking by their softmax.
template <class T>
Vector<T> score_video(const Matrix<T>& vision, const Matrix<T>& audio, const ModelParams<T>& p,
                      const Ablation& ablation = {}) {
  auto [v, a] = detail::masked_inputs(vision, audio, p.arch, ablation);
  BagForward<T> scratch;
  detail::forward_instances(v, a, p, scratch);
  return scratch.raw_scores;
}

}  // namespace mininet
