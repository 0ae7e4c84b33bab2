#pragma once

// Per-event training: paired bag sampling, SGD with momentum and coupled
// weight decay, step-decayed learning rate, and MNCK checkpoints.
//
// MNCK checkpoint (little-endian):
//
//   "MNCK" | u32 format version
//   u32 len | event tag
//   u32 len | training config, `key = value` lines
//   u32 count | tensor blocks: u32 len | name | u32 rows | u32 cols | f32 values
//   u32 count | velocity blocks, same layout
//   u64 step | u64 epoch
//   u32 count | RNG states, each u32 len | text
//   u32 len | epoch log lines
//   u64 FNV-1a hash of every preceding byte

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mininet/data.hpp"
#include "mininet/error.hpp"
#include "mininet/losses.hpp"
#include "mininet/model.hpp"
#include "mininet/numkit.hpp"
#include "mininet/parallel.hpp"
#include "mininet/rng.hpp"

namespace mininet {

struct TrainingConfig {
  double lr0 = 0.005;
  double lr_decay = 0.7;
  int lr_decay_every = 20;  // epochs
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int epochs = 60;
  std::size_t bag_size = 60;
  double tau = 60.0;  // seconds
  LossConfig loss;    // epsilon, ranking variant, loss-term ablations
  Ablation ablation;
  Architecture arch;  // arch.branches is k
  std::size_t pairs_per_step = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) {
      throw ConfigError("lr0 must be positive");
    }
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
      throw ConfigError("lr_decay must lie in (0, 1]");
    }
    if (lr_decay_every < 1) {
      throw ConfigError("lr_decay_every must be at least 1");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw ConfigError("momentum must lie in [0, 1)");
    }
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
      throw ConfigError("weight_decay must be nonnegative");
    }
    if (epochs < 0) {
      throw ConfigError("epochs must be nonnegative");
    }
    if (bag_size < 1) {
      throw ConfigError("bag_size must be at least 1");
    }
    if (!(tau > 0.0) || !std::isfinite(tau)) {
      throw ConfigError("tau must be positive");
    }
    if (pairs_per_step < 1) {
      throw ConfigError("pairs_per_step must be at least 1");
    }
    loss.validate();
    ablation.validate();
    arch.validate();
  }

  // Visits every serialized field as (key, reference).
  template <class Self, class Fn>
  static void for_each_field(Self& c, Fn&& fn) {
    fn("lr0", c.lr0);
    fn("lr_decay", c.lr_decay);
    fn("lr_decay_every", c.lr_decay_every);
    fn("momentum", c.momentum);
    fn("weight_decay", c.weight_decay);
    fn("epochs", c.epochs);
    fn("bag_size", c.bag_size);
    fn("tau", c.tau);
    fn("epsilon", c.loss.epsilon);
    fn("loss_variant", c.loss.variant);
    fn("no_mmrl", c.loss.no_mmrl);
    fn("no_bcm", c.loss.no_bcm);
    fn("no_audio", c.ablation.no_audio);
    fn("no_vision", c.ablation.no_vision);
    fn("k", c.arch.branches);
    fn("vision_dim", c.arch.vision_dim);
    fn("audio_dim", c.arch.audio_dim);
    fn("vision_hidden", c.arch.vision_hidden);
    fn("fusion_hidden", c.arch.fusion_hidden);
    fn("score_dim", c.arch.score_dim);
    fn("classifier_hidden", c.arch.classifier_hidden);
    fn("pairs_per_step", c.pairs_per_step);
    fn("seed", c.seed);
  }

  // `key = value` lines; doubles use shortest round-trip text.
  std::string to_text() const {
    std::string out;
    for_each_field(*this, [&](const char* key, const auto& v) {
      using V = std::decay_t<decltype(v)>;
      out += key;
      out += " = ";
      if constexpr (std::is_same_v<V, double>) {
        out += io::format_double(v);
      } else if constexpr (std::is_same_v<V, bool>) {
        out += v ? "true" : "false";
      } else if constexpr (std::is_same_v<V, RankingVariant>) {
        out += to_string(v);
      } else {
        out += std::to_string(v);
      }
      out += '\n';
    });
    return out;
  }

  static TrainingConfig from_text(std::string_view text, const std::string& what) {
    TrainingConfig c;
    std::size_t line_no = 0;
    for (auto line : io::split(text, '\n')) {
      ++line_no;
      line = io::trim(line);
      if (line.empty() || line.front() == '#') {
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw FormatError(what + ": line " + std::to_string(line_no) + ": expected key = value");
      }
      const auto key = io::trim(line.substr(0, eq));
      const auto value = io::trim(line.substr(eq + 1));
      bool matched = false;
      bool ok = true;
      for_each_field(c, [&](const char* k, auto& v) {
        if (key != k) {
          return;
        }
        matched = true;
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, double>) {
          const auto d = io::parse_double(value);
          ok = d.has_value();
          v = d.value_or(0.0);
        } else if constexpr (std::is_same_v<V, bool>) {
          ok = value == "true" || value == "false";
          v = value == "true";
        } else if constexpr (std::is_same_v<V, RankingVariant>) {
          v = parse_ranking_variant(value);
        } else if constexpr (std::is_same_v<V, std::uint64_t>) {
          std::uint64_t u = 0;
          const auto res = std::from_chars(value.data(), value.data() + value.size(), u);
          ok = res.ec == std::errc() && res.ptr == value.data() + value.size();
          v = u;
        } else {
          const auto i = io::parse_int(value);
          ok = i.has_value() && *i >= 0;
          v = static_cast<V>(i.value_or(0));
        }
      });
      if (!matched) {
        throw FormatError(what + ": line " + std::to_string(line_no) + ": unknown key '" +
                          std::string(key) + "'");
      }
      if (!ok) {
        throw FormatError(what + ": line " + std::to_string(line_no) + ": bad value for '" +
                          std::string(key) + "'");
      }
    }
    return c;
  }

  friend bool operator==(const TrainingConfig& a, const TrainingConfig& b) {
    return a.to_text() == b.to_text();
  }
};

// lr0 * lr_decay ^ floor(epoch / lr_decay_every).
inline double lr_at(int epoch, const TrainingConfig& cfg) {
  if (epoch < 0) {
    throw ConfigError("lr_at: negative epoch");
  }
  return cfg.lr0 * std::pow(cfg.lr_decay, epoch / cfg.lr_decay_every);
}

template <class T>
struct OptimizerState {
  GradientSet<T> velocity;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;

  static OptimizerState zeros_like(const TensorSet<T>& shape) {
    return OptimizerState{GradientSet<T>::zeros_like(shape), 0, 0};
  }
};

// For every parameter: g = grad + weight_decay * theta; v = momentum * v + g;
// theta -= lr * v. Arithmetic is done in double and stored as T.
template <class T>
void sgd_step(ModelParams<T>& params, const GradientSet<T>& grads, OptimizerState<T>& state,
              double lr, const TrainingConfig& cfg) {
  if (!params.same_shape(grads) || !params.same_shape(state.velocity)) {
    throw ShapeError("sgd_step: parameter, gradient and velocity shapes differ");
  }
  auto pv = params.views();
  const auto gv = grads.views();
  auto vv = state.velocity.views();
  for (const auto& g : gv) {
    for (T x : g.values) {
      if (!std::isfinite(static_cast<double>(x))) {
        throw NumericError("sgd_step: non-finite gradient in " + g.name);
      }
    }
  }
  for (std::size_t t = 0; t < pv.size(); ++t) {
    for (std::size_t i = 0; i < pv[t].values.size(); ++i) {
      const double theta = static_cast<double>(pv[t].values[i]);
      const double g = static_cast<double>(gv[t].values[i]) + cfg.weight_decay * theta;
      const double v = cfg.momentum * static_cast<double>(vv[t].values[i]) + g;
      vv[t].values[i] = static_cast<T>(v);
      pv[t].values[i] = static_cast<T>(theta - lr * v);
    }
  }
  params.mark_modified();
  ++state.step;
}

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown mean;

  friend bool operator==(const EpochLog& a, const EpochLog& b) {
    return a.epoch == b.epoch && a.lr == b.lr && a.mean.mm == b.mean.mm &&
           a.mean.bce_pos == b.mean.bce_pos && a.mean.bce_neg == b.mean.bce_neg &&
           a.mean.total == b.mean.total;
  }
};

// epoch <TAB> lr <TAB> mm <TAB> bce_pos <TAB> bce_neg <TAB> total
inline std::string format_log_line(const EpochLog& e) {
  return std::to_string(e.epoch) + '\t' + io::format_double(e.lr) + '\t' +
         io::format_double(e.mean.mm) + '\t' + io::format_double(e.mean.bce_pos) + '\t' +
         io::format_double(e.mean.bce_neg) + '\t' + io::format_double(e.mean.total);
}

inline EpochLog parse_log_line(std::string_view line, const std::string& what) {
  const auto f = io::split(line, '\t');
  const auto num = [&](std::size_t i) {
    const auto d = i < f.size() ? io::parse_double(f[i]) : std::nullopt;
    if (!d) {
      throw FormatError(what + ": malformed log line '" + std::string(line) + "'");
    }
    return *d;
  };
  if (f.size() != 6) {
    throw FormatError(what + ": log line needs 6 fields");
  }
  EpochLog e;
  e.epoch = static_cast<int>(num(0));
  e.lr = num(1);
  e.mean.mm = num(2);
  e.mean.bce_pos = num(3);
  e.mean.bce_neg = num(4);
  e.mean.total = num(5);
  return e;
}

// Training log file: '#'-prefixed header echoing the event and config, then
// one line per epoch.
inline std::string training_log_text(const std::string& event, const TrainingConfig& cfg,
                                     const std::vector<EpochLog>& log) {
  std::string out = "# event = " + event + '\n';
  const std::string config = cfg.to_text();
  for (auto line : io::split(config, '\n')) {
    if (!line.empty()) {
      out += "# " + std::string(line) + '\n';
    }
  }
  out += "# epoch\tlr\tmm\tbce_pos\tbce_neg\ttotal\n";
  for (const auto& e : log) {
    out += format_log_line(e) + '\n';
  }
  return out;
}

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string event;
  TrainingConfig config;
  ModelParams<float> params;
  OptimizerState<float> optimizer;
  Rng bag_rng;
  Rng negative_rng;
  Rng order_rng;
  std::vector<EpochLog> log;
};

namespace detail {

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void put_string(std::string& out, std::string_view s) {
  io::put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

inline std::string get_string(io::Reader& r) {
  const auto n = r.u32();
  return std::string(r.take(n));
}

template <class Set>
void put_tensors(std::string& out, const Set& set) {
  const auto views = set.views();
  io::put_u32(out, static_cast<std::uint32_t>(views.size()));
  for (const auto& v : views) {
    put_string(out, v.name);
    io::put_u32(out, static_cast<std::uint32_t>(v.rows));
    io::put_u32(out, static_cast<std::uint32_t>(v.cols));
    io::put_f32s(out, v.values.data(), v.values.size());
  }
}

// Reads tensor blocks into `set`, whose shapes define what is expected.
template <class Set>
void get_tensors(io::Reader& r, Set& set) {
  auto views = set.views();
  const auto count = r.u32();
  // Walk the common prefix first so that a shape difference is reported by
  // tensor name rather than as a count mismatch.
  for (std::size_t t = 0; t < std::min<std::size_t>(count, views.size()); ++t) {
    auto& v = views[t];
    const std::string name = get_string(r);
    if (name != v.name) {
      throw FormatError(r.what() + ": tensor '" + name + "' where '" + v.name + "' was expected");
    }
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (rows != v.rows || cols != v.cols) {
      throw ShapeError(r.what() + ": tensor " + name + " is " + shape_string(rows, cols) +
                       ", the architecture expects " + shape_string(v.rows, v.cols));
    }
    r.f32s(v.values.data(), v.values.size());
  }
  if (count != views.size()) {
    throw FormatError(r.what() + ": " + std::to_string(count) + " tensors, expected " +
                      std::to_string(views.size()));
  }
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out = "MNCK";
  io::put_u32(out, Checkpoint::kFormatVersion);
  detail::put_string(out, ck.event);
  detail::put_string(out, ck.config.to_text());
  detail::put_tensors(out, ck.params);
  detail::put_tensors(out, ck.optimizer.velocity);
  io::put_u64(out, ck.optimizer.step);
  io::put_u64(out, ck.optimizer.epoch);
  io::put_u32(out, 3);
  for (const Rng* rng : {&ck.bag_rng, &ck.negative_rng, &ck.order_rng}) {
    detail::put_string(out, rng->serialize());
  }
  std::string log;
  for (const auto& e : ck.log) {
    log += format_log_line(e) + '\n';
  }
  detail::put_string(out, log);
  io::put_u64(out, detail::fnv1a64(out));
  return out;
}

// With `expected`, tensors are checked against that architecture instead of
// the one recorded in the checkpoint's config; a mismatch names the tensor.
inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& what,
                                    std::optional<Architecture> expected = std::nullopt) {
  if (bytes.size() < 8 + 8 || bytes.substr(0, 4) != "MNCK") {
    throw FormatError(what + ": not an MNCK checkpoint");
  }
  {
    io::Reader head(bytes.substr(4, 4), what);
    const auto version = head.u32();
    if (version != Checkpoint::kFormatVersion) {
      throw FormatError(what + ": checkpoint format version " + std::to_string(version) +
                        ", this build reads version " +
                        std::to_string(Checkpoint::kFormatVersion));
    }
  }
  const auto body = bytes.substr(0, bytes.size() - 8);
  io::Reader tail(bytes.substr(bytes.size() - 8), what);
  if (tail.u64() != detail::fnv1a64(body)) {
    throw FormatError(what + ": checksum mismatch (truncated or corrupt)");
  }
  io::Reader r(body, what);
  r.take(8);
  Checkpoint ck;
  ck.event = detail::get_string(r);
  ck.config = TrainingConfig::from_text(detail::get_string(r), what);
  const Architecture arch = expected.value_or(ck.config.arch);
  arch.validate();
  ck.params = ModelParams<float>::zeros(arch);
  detail::get_tensors(r, ck.params);
  ck.params.mark_modified();
  ck.optimizer = OptimizerState<float>::zeros_like(ck.params);
  detail::get_tensors(r, ck.optimizer.velocity);
  ck.optimizer.step = r.u64();
  ck.optimizer.epoch = r.u64();
  if (r.u32() != 3) {
    throw FormatError(what + ": expected three RNG states");
  }
  for (Rng* rng : {&ck.bag_rng, &ck.negative_rng, &ck.order_rng}) {
    *rng = Rng::deserialize(detail::get_string(r));
  }
  const std::string log = detail::get_string(r);
  for (auto line : io::split(log, '\n')) {
    if (!line.empty()) {
      ck.log.push_back(parse_log_line(line, what));
    }
  }
  if (r.remaining() != 0) {
    throw FormatError(what + ": trailing bytes");
  }
  if (!ck.params.all_finite()) {
    throw FormatError(what + ": non-finite parameter");
  }
  return ck;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  io::write_file(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const fs::path& path,
                                  std::optional<Architecture> expected = std::nullopt) {
  return decode_checkpoint(io::read_file(path), path.string(), expected);
}

// Feature widths to demand from files for an architecture; nullopt means the
// standard 512/128.
inline std::optional<FeatureDims> feature_dims_for(const Architecture& arch) {
  const FeatureDims dims{static_cast<std::uint32_t>(arch.vision_dim),
                         static_cast<std::uint32_t>(arch.audio_dim)};
  if (dims == FeatureDims{}) {
    return std::nullopt;
  }
  return dims;
}

// Training state for one interest event. Each epoch takes one optimizer step
// per positive video, in an order shuffled per epoch; every step pairs a bag
// of that video with a bag of a uniformly chosen negative video. Init, bag
// sampling, negative choice and epoch order draw from separate streams of
// the root seed.
class Trainer {
 public:
  Trainer(std::string event, TrainingConfig cfg, std::vector<VideoRecord> positives,
          std::vector<VideoRecord> negatives)
      : event_(std::move(event)),
        cfg_(std::move(cfg)),
        positives_(std::move(positives)),
        negatives_(std::move(negatives)) {
    cfg_.validate();
    check_videos();
    params_ = init_params<float>(cfg_.arch, cfg_.seed);
    opt_ = OptimizerState<float>::zeros_like(params_);
    bag_rng_ = Rng(cfg_.seed, Stream::kBagSampling);
    negative_rng_ = Rng(cfg_.seed, Stream::kNegativeSelection);
    order_rng_ = Rng(cfg_.seed, Stream::kEpochOrder);
  }

  // Continues from a checkpoint. `epochs` may differ from the stored config
  // to extend a run.
  Trainer(Checkpoint ck, std::vector<VideoRecord> positives, std::vector<VideoRecord> negatives,
          std::optional<int> epochs = std::nullopt)
      : event_(std::move(ck.event)),
        cfg_(std::move(ck.config)),
        positives_(std::move(positives)),
        negatives_(std::move(negatives)),
        params_(std::move(ck.params)),
        opt_(std::move(ck.optimizer)),
        bag_rng_(std::move(ck.bag_rng)),
        negative_rng_(std::move(ck.negative_rng)),
        order_rng_(std::move(ck.order_rng)),
        log_(std::move(ck.log)) {
    if (epochs) {
      cfg_.epochs = *epochs;
    }
    cfg_.validate();
    check_videos();
    params_.mark_modified();
  }

  bool finished() const { return static_cast<int>(opt_.epoch) >= cfg_.epochs; }

  const EpochLog& run_epoch(std::size_t threads = 1) {
    const int epoch = static_cast<int>(opt_.epoch);
    const double lr = lr_at(epoch, cfg_);
    std::vector<std::size_t> order(positives_.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      order[i] = i;
    }
    order_rng_.shuffle(std::span<std::size_t>(order));

    LossBreakdown sum;
    for (std::size_t start = 0; start < order.size(); start += cfg_.pairs_per_step) {
      const std::size_t n = std::min(cfg_.pairs_per_step, order.size() - start);
      // Sampling is sequential so the streams advance identically for any
      // thread count.
      std::vector<std::pair<Bag<float>, Bag<float>>> pairs;
      pairs.reserve(n);
      for (std::size_t c = 0; c < n; ++c) {
        auto pos = sample_bag(positives_[order[start + c]], cfg_.bag_size, bag_rng_,
                              Polarity::kPositive);
        const auto j = static_cast<std::size_t>(negative_rng_.below(negatives_.size()));
        auto neg = sample_bag(negatives_[j], cfg_.bag_size, bag_rng_, Polarity::kNegative);
        pairs.emplace_back(std::move(pos), std::move(neg));
      }
      std::vector<LossBreakdown> losses(n);
      std::vector<GradientSet<float>> grads(n);
      parallel_for(n, threads, [&](std::size_t c) {
        try {
          const auto fp = forward_bag(pairs[c].first, params_, cfg_.ablation);
          const auto fn = forward_bag(pairs[c].second, params_, cfg_.ablation);
          losses[c] = total_loss(fp, fn, cfg_.loss);
          grads[c] = backward(fp, fn, params_, cfg_.loss);
        } catch (const NumericError& e) {
          throw NumericError("training '" + event_ + "', epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(opt_.step) + ": " + e.what());
        }
      });
      auto step_grad = std::move(grads[0]);
      for (std::size_t c = 0; c < n; ++c) {
        if (!std::isfinite(losses[c].total)) {
          throw NumericError("training '" + event_ + "': non-finite loss at epoch " +
                             std::to_string(epoch) + ", step " + std::to_string(opt_.step));
        }
        sum += losses[c];
        if (c > 0) {
          step_grad += grads[c];
        }
      }
      if (n > 1) {
        step_grad *= 1.0f / static_cast<float>(n);
      }
      sgd_step(params_, step_grad, opt_, lr, cfg_);
    }
    sum /= static_cast<double>(order.size());
    ++opt_.epoch;
    log_.push_back(EpochLog{epoch, lr, sum});
    return log_.back();
  }

  void run(std::size_t threads = 1,
           const std::function<void(const EpochLog&)>& on_epoch = nullptr) {
    while (!finished()) {
      const auto& e = run_epoch(threads);
      if (on_epoch) {
        on_epoch(e);
      }
    }
  }

  Checkpoint checkpoint() const {
    return Checkpoint{event_, cfg_, params_, opt_, bag_rng_, negative_rng_, order_rng_, log_};
  }

  const std::string& event() const { return event_; }
  const TrainingConfig& config() const { return cfg_; }
  const ModelParams<float>& params() const { return params_; }
  const OptimizerState<float>& optimizer() const { return opt_; }
  const std::vector<EpochLog>& log() const { return log_; }

 private:
  void check_videos() const {
    if (positives_.empty() || negatives_.empty()) {
      throw ConfigError("event '" + event_ + "': training needs positive and negative videos");
    }
  }

  std::string event_;
  TrainingConfig cfg_;
  std::vector<VideoRecord> positives_;
  std::vector<VideoRecord> negatives_;
  ModelParams<float> params_;
  OptimizerState<float> opt_;
  Rng bag_rng_;
  Rng negative_rng_;
  Rng order_rng_;
  std::vector<EpochLog> log_;
};

// Loads the tau split of `index` for `event` and trains to completion.
inline Trainer train_event(const DatasetIndex& index, const std::string& event,
                           const TrainingConfig& cfg, std::size_t threads = 1) {
  cfg.validate();
  const auto split = split_videos(index, event, cfg.tau);
  const auto dims = feature_dims_for(cfg.arch);
  Trainer trainer(event, cfg, load_videos(split.positives, dims),
                  load_videos(split.negatives, dims));
  trainer.run(threads);
  return trainer;
}

}  // namespace mininet
