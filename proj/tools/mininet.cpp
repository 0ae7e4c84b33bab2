// mininet: train, evaluate and inspect highlight-scoring models.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mininet/data.hpp"
#include "mininet/error.hpp"
#include "mininet/eval.hpp"
#include "mininet/gradcheck.hpp"
#include "mininet/train.hpp"

namespace fs = std::filesystem;
using namespace mininet;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct TrainArgs {
  fs::path manifest;
  std::vector<std::string> events;
  fs::path out;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string loss_variant = "max-max";
  TrainingConfig cfg;
};

struct EvalArgs {
  std::vector<fs::path> checkpoints;
  fs::path run_dir;
  fs::path manifest;
  std::string event;
  std::string metric = "map";
  std::string summary_mode = "auto";
  fs::path out;
  std::size_t threads = 1;
  std::optional<Index> k;
  std::optional<Index> vision_dim;
  std::optional<Index> audio_dim;
};

struct ScoreArgs {
  fs::path checkpoint;
  fs::path features;
  std::optional<std::size_t> topk;
  std::optional<double> threshold;
};

struct SynthArgs {
  fs::path out;
  SyntheticSpec spec;
};

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::size_t seeds = 20;
  std::string variant;
  double step = GradCheckCase{}.step;
  double perturb = 0.0;
  std::size_t threads = 1;
};

// Echoes the effective merged configuration of a subcommand.
void write_effective_config(const CLI::App& sub, const fs::path& out_dir) {
  io::write_file(out_dir / "config.txt", sub.config_to_str(true, false));
}

// Every referenced file must exist before any work starts.
void check_manifest_files(const DatasetIndex& index) {
  for (const auto& r : index.records) {
    if (!fs::is_regular_file(r.feature_path)) {
      throw Error("video '" + r.video_id + "': missing feature file " + r.feature_path.string());
    }
    for (const auto& l : r.label_paths) {
      if (!fs::is_regular_file(l)) {
        throw Error("video '" + r.video_id + "': missing label file " + l.string());
      }
    }
  }
}

void add_training_flags(CLI::App& sub, TrainArgs& a) {
  auto& c = a.cfg;
  sub.add_option("--lr0", c.lr0, "Initial learning rate")->capture_default_str();
  sub.add_option("--lr-decay", c.lr_decay, "Learning-rate decay factor")->capture_default_str();
  sub.add_option("--lr-decay-every", c.lr_decay_every, "Epochs between decays")
      ->capture_default_str();
  sub.add_option("--momentum", c.momentum)->capture_default_str();
  sub.add_option("--weight-decay", c.weight_decay)->capture_default_str();
  sub.add_option("--epochs", c.epochs)->capture_default_str();
  sub.add_option("--bag-size", c.bag_size, "Instances per bag")->capture_default_str();
  sub.add_option("--tau", c.tau, "Duration threshold in seconds")->capture_default_str();
  sub.add_option("--epsilon", c.loss.epsilon, "Ranking margin")->capture_default_str();
  sub.add_option("--k", c.arch.branches, "Fusion branches")->capture_default_str();
  sub.add_option("--loss-variant", a.loss_variant, "max-max, min-min, min-max or max-min")
      ->capture_default_str();
  sub.add_flag("--no-audio", c.ablation.no_audio, "Zero the audio input");
  sub.add_flag("--no-vision", c.ablation.no_vision, "Zero the vision input");
  sub.add_flag("--no-mmrl", c.loss.no_mmrl, "Drop the ranking loss");
  sub.add_flag("--no-bcm", c.loss.no_bcm, "Drop the bag classification loss");
  sub.add_option("--pairs-per-step", c.pairs_per_step, "Bag pairs averaged per update")
      ->capture_default_str();
  sub.add_option("--vision-dim", c.arch.vision_dim, "Vision feature width")
      ->capture_default_str();
  sub.add_option("--audio-dim", c.arch.audio_dim, "Audio feature width")->capture_default_str();
}

int cmd_train(const CLI::App& sub, TrainArgs& a) {
  a.cfg.seed = a.seed;
  a.cfg.loss.variant = parse_ranking_variant(a.loss_variant);
  a.cfg.validate();
  const auto index = read_manifest(a.manifest);
  check_manifest_files(index);
  std::vector<std::string> events = a.events;
  if (events.empty()) {
    const auto all = index.events();
    events.assign(all.begin(), all.end());
  }
  for (const auto& e : events) {
    if (!index.events().contains(e)) {
      throw ConfigError("event '" + e + "' does not occur in " + a.manifest.string());
    }
    split_videos(index, e, a.cfg.tau);  // fail fast on an empty split
  }
  fs::create_directories(a.out);
  write_effective_config(sub, a.out);
  for (const auto& e : events) {
    const auto trainer = train_event(index, e, a.cfg, a.threads);
    const fs::path dir = a.out / e;
    save_checkpoint(dir / "checkpoint.mnck", trainer.checkpoint());
    io::write_file(dir / "train.log", training_log_text(e, a.cfg, trainer.log()));
    const double final_loss = trainer.log().empty() ? 0.0 : trainer.log().back().mean.total;
    std::cout << e << '\t' << trainer.log().size() << " epochs\tfinal loss "
              << io::format_double(final_loss) << '\n';
  }
  return 0;
}

int cmd_eval(EvalArgs& a) {
  const Metric metric = parse_metric(a.metric);
  const SummaryMode mode = parse_summary_mode(a.summary_mode);
  std::vector<fs::path> checkpoints = a.checkpoints;
  if (!a.run_dir.empty()) {
    for (const auto& entry : fs::directory_iterator(a.run_dir)) {
      if (fs::is_regular_file(entry.path() / "checkpoint.mnck")) {
        checkpoints.push_back(entry.path() / "checkpoint.mnck");
      }
    }
    std::sort(checkpoints.begin(), checkpoints.end());
  }
  if (checkpoints.empty()) {
    throw ConfigError("eval: give --checkpoint or a --run directory containing checkpoints");
  }
  if (!a.event.empty() && checkpoints.size() > 1) {
    throw ConfigError("eval: --event needs a single checkpoint");
  }
  const auto index = read_manifest(a.manifest);
  check_manifest_files(index);
  for (const auto& path : checkpoints) {
    // Peek at the stored architecture, then apply any overrides and reload
    // against them so a mismatch names the tensor.
    auto ck = load_checkpoint(path);
    if (a.k || a.vision_dim || a.audio_dim) {
      Architecture arch = ck.config.arch;
      arch.branches = a.k.value_or(arch.branches);
      arch.vision_dim = a.vision_dim.value_or(arch.vision_dim);
      arch.audio_dim = a.audio_dim.value_or(arch.audio_dim);
      ck = load_checkpoint(path, arch);
    }
    const std::string event = a.event.empty() ? ck.event : a.event;
    std::vector<VideoDescriptor> wanted;
    for (const auto& r : index.records) {
      if (r.event_tag == event) {
        wanted.push_back(r);
      }
    }
    const auto videos = load_videos(wanted, feature_dims_for(ck.params.arch));
    const auto& ablation = ck.config.ablation;
    const EvalReport report =
        metric == Metric::kMap
            ? evaluate_map(ck.params, videos, event, ablation, a.threads)
            : evaluate_top5_map(ck.params, videos, event, mode, ablation, a.threads);
    if (!a.out.empty()) {
      const std::string name = event + (metric == Metric::kMap ? ".map" : ".top5map") + ".tsv";
      io::write_file(a.out / name, report.to_text());
    }
    std::cout << event << '\t' << to_string(metric) << '\t' << io::format_double(report.aggregate)
              << '\n';
  }
  return 0;
}

int cmd_score(const ScoreArgs& a) {
  const auto ck = load_checkpoint(a.checkpoint);
  auto feats = read_feature_file(a.features, feature_dims_for(ck.params.arch));
  VideoRecord video{a.features.stem().string(), ck.event, 0.0, std::move(feats.vision),
                    std::move(feats.audio), std::nullopt, {}};
  auto segments = score_segments(video, ck.params, ck.config.ablation);
  if (a.topk) {
    auto sel = extract_top_k(segments, *a.topk);
    if (sel.clamped) {
      std::cerr << "warning: --topk " << *a.topk << " exceeds " << segments.size()
                << " segments; returning all\n";
    }
    segments = std::move(sel.segments);
  } else if (a.threshold) {
    segments = extract_above(segments, *a.threshold).segments;
  }
  for (const auto& s : segments) {
    std::cout << s.segment_index << '\t' << io::format_double(s.start_s) << '\t'
              << io::format_double(s.score) << '\n';
  }
  return 0;
}

int cmd_synth(const CLI::App& sub, const SynthArgs& a) {
  a.spec.validate();
  const auto ds = gen_synthetic(a.spec, a.out);
  write_effective_config(sub, a.out);
  std::cout << "wrote " << ds.all.records.size() << " videos (" << ds.train.records.size()
            << " train, " << ds.test.records.size() << " test) to " << a.out.string() << '\n';
  return 0;
}

struct GradcheckSetting {
  RankingVariant variant;
  Ablation ablation;
  bool no_mmrl;
  bool no_bcm;
  std::uint64_t seed;
};

std::string describe(const GradcheckSetting& s) {
  std::string out = std::string(to_string(s.variant)) + " seed " + std::to_string(s.seed);
  if (s.ablation.no_audio) out += " no-audio";
  if (s.ablation.no_vision) out += " no-vision";
  if (s.no_mmrl) out += " no-mmrl";
  if (s.no_bcm) out += " no-bcm";
  return out;
}

int cmd_gradcheck(const GradcheckArgs& a) {
  std::vector<RankingVariant> variants(std::begin(kAllRankingVariants),
                                       std::end(kAllRankingVariants));
  if (!a.variant.empty()) {
    variants = {parse_ranking_variant(a.variant)};
  }
  if (a.seeds < 1) {
    throw ConfigError("gradcheck: --seeds must be at least 1");
  }
  std::vector<GradcheckSetting> settings;
  for (auto v : variants) {
    for (const Ablation ab : {Ablation{}, Ablation{true, false}, Ablation{false, true}}) {
      for (const auto& [no_mmrl, no_bcm] : {std::pair{false, false}, std::pair{true, false},
                                           std::pair{false, true}}) {
        for (std::size_t s = 0; s < a.seeds; ++s) {
          settings.push_back({v, ab, no_mmrl, no_bcm, a.seed + s});
        }
      }
    }
  }
  std::vector<GradCheckResult> results(settings.size());
  parallel_for(settings.size(), a.threads, [&](std::size_t i) {
    const auto& s = settings[i];
    GradCheckCase c;
    c.seed = s.seed;
    c.loss.variant = s.variant;
    c.loss.no_mmrl = s.no_mmrl;
    c.loss.no_bcm = s.no_bcm;
    c.ablation = s.ablation;
    c.step = a.step;
    c.perturb_analytic = a.perturb;
    results[i] = run_gradient_check(c);
  });
  bool ok = true;
  for (auto v : variants) {
    double worst = 0.0;
    for (std::size_t i = 0; i < settings.size(); ++i) {
      if (settings[i].variant == v) {
        worst = std::max(worst, results[i].max_relative_error);
      }
    }
    std::cout << to_string(v) << "\tmax relative error\t" << worst << '\n';
  }
  for (std::size_t i = 0; i < settings.size(); ++i) {
    if (!results[i].offending.empty()) {
      ok = false;
      std::cerr << "FAIL " << describe(settings[i]) << ":";
      for (const auto& t : results[i].offending) {
        std::cerr << ' ' << t;
      }
      std::cerr << '\n';
    }
  }
  return ok ? 0 : kExitRuntime;
}

// CLI11 reads config files for the top-level app only. Entries of a
// subcommand's --config file are turned into `--key=value` arguments placed
// right after the subcommand name, so flags given later on the command line
// take precedence. Underscores in keys are read as dashes.
std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
  const auto sub_at = std::find_if(args.begin(), args.end(), [&](const std::string& a) {
    return app.get_subcommand_no_throw(a) != nullptr;
  });
  if (sub_at == args.end()) {
    return args;
  }
  std::string file;
  for (auto it = sub_at + 1; it != args.end(); ++it) {
    if (*it == "--config" && it + 1 != args.end()) {
      file = *(it + 1);
    } else if (it->rfind("--config=", 0) == 0) {
      file = it->substr(9);
    }
  }
  if (file.empty()) {
    return args;
  }
  std::vector<std::string> injected;
  for (const auto& item : CLI::ConfigTOML().from_file(file)) {
    if (item.name == "++" || item.name == "--") {
      continue;  // section markers
    }
    if (!item.parents.empty()) {
      throw CLI::ConversionError(file + ": sections are not supported ('" + item.fullname() +
                                 "')");
    }
    std::string key = item.name;
    std::replace(key.begin(), key.end(), '_', '-');
    for (const auto& v : item.inputs) {
      injected.push_back("--" + key + "=" + v);
    }
  }
  args.insert(sub_at + 1, injected.begin(), injected.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate multiple-instance highlight-scoring models"};
  app.require_subcommand(1, 1);
  // Config entries come first on the expanded command line; the last value
  // given wins.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "Show help for every command");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train one model per interest event");
  train->add_option("--config", "File of `key = value` lines; flags override it");
  train->add_option("--manifest", train_args.manifest, "Training manifest")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--event", train_args.events, "Interest event (repeatable; default all)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  train->add_option("--out", train_args.out, "Output directory")->required();
  train->add_option("--seed", train_args.seed, "Root seed")->required();
  train->add_option("--threads", train_args.threads, "Worker threads for bag pairs")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  add_training_flags(*train, train_args);

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Score labeled test videos and report mAP");
  eval->add_option("--config", "File of `key = value` lines; flags override it");
  eval->add_option("--checkpoint", eval_args.checkpoints, "Checkpoint file (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
      ->check(CLI::ExistingFile);
  eval->add_option("--run", eval_args.run_dir, "Training output directory")
      ->check(CLI::ExistingDirectory);
  eval->add_option("--manifest", eval_args.manifest, "Labeled test manifest")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--event", eval_args.event, "Evaluate this event instead of the trained one");
  eval->add_option("--metric", eval_args.metric, "map or top5map")->capture_default_str();
  eval->add_option("--summary-mode", eval_args.summary_mode,
                   "Top-5 ground truth: auto, importance or summaries")
      ->capture_default_str();
  eval->add_option("--out", eval_args.out, "Directory for report files");
  eval->add_option("--threads", eval_args.threads, "Worker threads for videos")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  eval->add_option("--k", eval_args.k, "Expected fusion branches");
  eval->add_option("--vision-dim", eval_args.vision_dim, "Expected vision width");
  eval->add_option("--audio-dim", eval_args.audio_dim, "Expected audio width");

  ScoreArgs score_args;
  auto* score = app.add_subcommand("score", "Print per-segment scores of one video");
  score->add_option("--checkpoint", score_args.checkpoint)->required()->check(CLI::ExistingFile);
  score->add_option("--features", score_args.features, "MNF1 feature file")
      ->required()
      ->check(CLI::ExistingFile);
  auto* topk = score->add_option("--topk", score_args.topk, "Keep the k best segments")
                   ->check(CLI::PositiveNumber);
  score->add_option("--threshold", score_args.threshold, "Keep segments scoring at least this")
      ->excludes(topk);

  SynthArgs synth_args;
  auto& spec = synth_args.spec;
  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic dataset");
  synth->add_option("--config", "File of `key = value` lines; flags override it");
  synth->add_option("--out", synth_args.out, "Output directory")->required();
  synth->add_option("--seed", spec.seed)->required();
  synth->add_option("--events", spec.n_events)->capture_default_str();
  synth->add_option("--videos-per-event", spec.videos_per_event)->capture_default_str();
  synth->add_option("--segments", spec.segments_per_video, "Segments per video")
      ->capture_default_str();
  synth->add_option("--highlight-fraction", spec.highlight_fraction)->capture_default_str();
  synth->add_option("--noise-sigma", spec.noise_sigma)->capture_default_str();
  synth->add_option("--background-prototypes", spec.background_prototypes)
      ->capture_default_str();
  synth->add_option("--tau", spec.tau)->capture_default_str();
  synth->add_option("--test-fraction", spec.test_fraction)->capture_default_str();
  synth->add_option("--vision-dim", spec.dims.vision)->capture_default_str();
  synth->add_option("--audio-dim", spec.dims.audio)->capture_default_str();

  GradcheckArgs gc_args;
  auto* gradcheck =
      app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  gradcheck->add_option("--seed", gc_args.seed, "First seed")->capture_default_str();
  gradcheck->add_option("--seeds", gc_args.seeds, "Number of seeds")->capture_default_str();
  gradcheck->add_option("--variant", gc_args.variant, "Check only this loss variant");
  gradcheck->add_option("--step", gc_args.step, "Finite-difference step")->capture_default_str();
  gradcheck->add_option("--threads", gc_args.threads)
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--perturb-gradient", gc_args.perturb)->group("");

  try {
    auto args = expand_config(app, std::vector<std::string>(argv + 1, argv + argc));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto parsed = app.get_subcommands();
    std::cerr << (parsed.empty() ? app.help() : parsed.front()->help());
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(*train, train_args);
    if (*eval) return cmd_eval(eval_args);
    if (*score) return cmd_score(score_args);
    if (*synth) return cmd_synth(*synth, synth_args);
    if (*gradcheck) return cmd_gradcheck(gc_args);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
