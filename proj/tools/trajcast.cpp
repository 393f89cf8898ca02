// trajcast: generate synthetic detection streams, train forecasters, evaluate them.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "trajcast/checkpoint.hpp"
#include "trajcast/dataio.hpp"
#include "trajcast/eval.hpp"
#include "trajcast/synth.hpp"
#include "trajcast/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace trajcast;

namespace {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kConfigFailure = 2,
  kDataFailure = 3,
  kNumericsFailure = 4,
  kEvalFailure = 5,
};

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return kConfigFailure;
    case ErrorKind::data: return kDataFailure;
    case ErrorKind::numerics: return kNumericsFailure;
    case ErrorKind::eval: return kEvalFailure;
  }
  return kUnexpected;
}

// Output directory of one command: config.toml first, outputs, then run.json listing them.
class RunDir {
 public:
  RunDir(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create run directory " + dir_.string() + ": " + ec.message());
  }

  const fs::path& path() const noexcept { return dir_; }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + (dir_ / name).string());
    out << content;
    if (!out) throw ConfigError("failed writing " + (dir_ / name).string());
    note(name);
  }

  void note(const std::string& name) {
    if (std::find(outputs_.begin(), outputs_.end(), name) == outputs_.end()) outputs_.push_back(name);
  }

  void finish(json resolved) {
    json outputs = json::array();
    for (const auto& name : outputs_) {
      const fs::path p = dir_ / name;
      json entry{{"path", name}};
      if (fs::is_regular_file(p)) entry["bytes"] = fs::file_size(p);
      outputs.push_back(entry);
    }
    const json manifest{{"tool", "trajcast"},   {"manifest_version", 1}, {"command", command_},
                        {"config", "config.toml"}, {"resolved", std::move(resolved)}, {"outputs", outputs}};
    std::ofstream(dir_ / "run.json", std::ios::trunc) << manifest.dump(2) << '\n';
  }

 private:
  fs::path dir_;
  std::string command_;
  std::vector<std::string> outputs_;
};

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

Dataset load_dataset_verbose(const fs::path& dir) {
  Dataset ds = load_dataset(dir);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << '\n';
  return ds;
}

std::vector<Sample> split_samples(const Dataset& ds, const std::string& split, int s, int f, int stride) {
  std::vector<Sample> out;
  for (const VideoDetections* v : ds.videos_in(split)) {
    auto part = extract_samples(*v, s, f, stride);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

json training_meta_json(const TrainingMetadata& m) {
  return {{"epoch", m.epoch}, {"seed", m.seed}, {"lambda", m.lambda}, {"horizon", m.horizon},
          {"use_anatomy", m.use_anatomy}};
}

// ---- generate ----

struct GenerateArgs {
  SceneConfig scene;
  std::string coupling = "anatomy_coupled";
  std::string run_dir;
};

void add_generate(CLI::App& app, GenerateArgs& a) {
  auto* c = app.add_subcommand("generate", "Write a synthetic detection dataset")->configurable();
  c->add_option("--run-dir", a.run_dir, "Output run directory (dataset goes to <run-dir>/dataset)")
      ->required()
      ->configurable(false);
  c->add_option("--videos", a.scene.n_videos, "Number of videos")->capture_default_str();
  c->add_option("--frames", a.scene.frames_per_video, "Frames per video")->capture_default_str();
  c->add_option("--visible-anatomy", a.scene.visible_anatomy_count, "Anatomy classes shown (0..n-1)")
      ->capture_default_str();
  c->add_option("--anatomy-jitter", a.scene.anatomy_jitter_sigma, "Anatomy box jitter sigma")->capture_default_str();
  c->add_option("--instrument-jitter", a.scene.instrument_jitter_sigma, "Instrument box jitter sigma")
      ->capture_default_str();
  c->add_option("--detection-dropout", a.scene.detection_dropout_prob, "Per-detection drop probability")
      ->capture_default_str();
  c->add_option("--speed", a.scene.instrument_speed, "Instrument speed per frame")->capture_default_str();
  c->add_option("--speed-noise", a.scene.speed_noise_sigma, "Speed noise sigma")->capture_default_str();
  c->add_option("--dwell-min", a.scene.dwell_min, "Shortest dwell in frames")->capture_default_str();
  c->add_option("--dwell-max", a.scene.dwell_max, "Longest dwell in frames")->capture_default_str();
  c->add_option("--coupling", a.coupling, "anatomy_coupled or decoupled")->capture_default_str();
  c->add_option("--seed", a.scene.seed, "Generator seed")->capture_default_str();
  c->add_option("--window-length", a.scene.window_length, "Window length the data must support")
      ->capture_default_str();
  c->add_option("--horizon", a.scene.horizon, "Longest horizon the data must support")->capture_default_str();
  c->add_option("--validation-fraction", a.scene.validation_fraction, "Share of videos for validation")
      ->capture_default_str();
  c->add_option("--test-fraction", a.scene.test_fraction, "Share of videos for test")->capture_default_str();
}

void run_generate(GenerateArgs& a, const std::string& config_text) {
  a.scene.coupling = parse_coupling(a.coupling);
  a.scene.validate();
  RunDir run(a.run_dir, "generate");
  run.write("config.toml", config_text);
  const fs::path dataset_dir = run.path() / "dataset";
  fs::remove_all(dataset_dir);
  const Dataset ds = generate_dataset(a.scene, dataset_dir);
  run.note("dataset");
  const DatasetSummary summary = describe_dataset(ds, a.scene.window_length);
  run.write("summary.json", dump_json(to_json(summary)));
  std::cout << format_summary(summary);
  run.finish({{"scene", to_json(a.scene)}});
}

// ---- describe ----

struct DescribeArgs {
  std::string dataset;
  int window_length = 64;
  std::string run_dir;
};

void add_describe(CLI::App& app, DescribeArgs& a) {
  auto* c = app.add_subcommand("describe", "Summarise a dataset directory")->configurable();
  c->add_option("--dataset", a.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c->add_option("--window-length", a.window_length, "Window length for sample counts")->capture_default_str();
  c->add_option("--run-dir", a.run_dir, "Also write summary.json here")->configurable(false);
}

void run_describe(const DescribeArgs& a, const std::string& config_text) {
  const DatasetSummary summary = describe_dataset(load_dataset_verbose(a.dataset), a.window_length);
  std::cout << format_summary(summary);
  if (!a.run_dir.empty()) {
    RunDir run(a.run_dir, "describe");
    run.write("config.toml", config_text);
    run.write("summary.json", dump_json(to_json(summary)));
    run.finish({{"dataset", a.dataset}, {"window_length", a.window_length}});
  }
}

// ---- train ----

struct TrainArgs {
  std::string dataset;
  std::string run_dir;
  std::string split = "forecaster_train";
  std::string val_split = "validation";
  int stride = 4;
  double min_magnitude = 0.0;
  bool no_anatomy = false;
  NetConfig net;
  std::vector<int> fc_dims{512, 256, 128};
  std::string aggregation = "flatten";
  LossConfig loss;
  OptimConfig optim;
  int epochs = 0;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* c = app.add_subcommand("train", "Train a forecaster")->configurable();
  c->add_option("--dataset", a.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c->add_option("--run-dir", a.run_dir, "Output run directory")->required()->configurable(false);
  c->add_option("--split", a.split, "Training split")->capture_default_str();
  c->add_option("--val-split", a.val_split, "Validation split (empty for none)")->capture_default_str();
  c->add_option("--stride", a.stride, "Window stride for training samples")->capture_default_str();
  c->add_option("--min-magnitude", a.min_magnitude,
                "Train only on samples whose 8-frame displacement exceeds this (0: all)")
      ->capture_default_str();
  c->add_flag("--no-anatomy", a.no_anatomy, "Zero the anatomy rows (instrument-only variant)");
  c->add_option("--horizon", a.net.horizon, "Frames to forecast")->capture_default_str();
  c->add_option("--seq-len", a.net.seq_len, "Window length")->capture_default_str();
  c->add_option("--layers", a.net.n_layers, "Encoder layers")->capture_default_str();
  c->add_option("--heads", a.net.n_heads, "Attention heads")->capture_default_str();
  c->add_option("--ff-dim", a.net.ff_dim, "Feed-forward width")->capture_default_str();
  c->add_option("--fc-dims", a.fc_dims, "Three FC widths")->delimiter(',')->expected(3)->capture_default_str();
  c->add_option("--latent-dim", a.net.latent_dim, "Latent width")->capture_default_str();
  c->add_option("--dropout", a.net.dropout, "Dropout rate")->capture_default_str();
  c->add_option("--aggregation", a.aggregation, "flatten or mean_pool")->capture_default_str();
  c->add_option("--lambda", a.loss.lambda, "Direction loss weight")->capture_default_str();
  c->add_option("--epochs", a.epochs, "Epochs (0: 75 for horizon <= 8, else 150)")->capture_default_str();
  c->add_option("--warmup", a.optim.warmup_epochs, "Warm-up epochs")->capture_default_str();
  c->add_option("--lr", a.optim.peak_lr, "Peak learning rate")->capture_default_str();
  c->add_option("--batch-size", a.optim.batch_size, "Batch size")->capture_default_str();
  c->add_option("--beta1", a.optim.beta1, "Adam beta1")->capture_default_str();
  c->add_option("--beta2", a.optim.beta2, "Adam beta2")->capture_default_str();
  c->add_option("--adam-eps", a.optim.adam_epsilon, "Adam epsilon")->capture_default_str();
  c->add_option("--weight-decay", a.optim.weight_decay, "Decoupled weight decay")->capture_default_str();
  c->add_option("--seed", a.optim.seed, "Init, shuffle and dropout seed")->capture_default_str();
}

void run_train(TrainArgs& a, const std::string& config_text) {
  if (a.fc_dims.size() != 3) throw ConfigError("train field 'fc_dims' needs exactly three widths");
  a.net.fc_dims = {a.fc_dims[0], a.fc_dims[1], a.fc_dims[2]};
  a.net.aggregation = parse_aggregation(a.aggregation);
  a.optim.total_epochs = a.epochs > 0 ? a.epochs : OptimConfig::default_epochs(a.net.horizon);
  if (a.epochs < 0) throw ConfigError("train field 'epochs' must be >= 0");
  if (a.stride < 1) throw ConfigError("train field 'stride' must be >= 1");
  a.net.validate();
  a.loss.validate();
  a.optim.validate();

  const Dataset ds = load_dataset_verbose(a.dataset);
  const std::vector<Sample> samples = filter_by_magnitude(
      split_samples(ds, a.split, a.net.seq_len, a.net.horizon, a.stride), a.min_magnitude);
  if (samples.empty()) throw InputError("split '" + a.split + "' yields no training samples");
  std::vector<Sample> validation;
  if (!a.val_split.empty()) {
    validation = filter_by_magnitude(split_samples(ds, a.val_split, a.net.seq_len, a.net.horizon, a.stride),
                                     a.min_magnitude);
  }

  RunDir run(a.run_dir, "train");
  run.write("config.toml", config_text);
  std::cerr << "training on " << samples.size() << " samples (" << validation.size() << " validation), "
            << a.optim.total_epochs << " epochs, " << (a.no_anatomy ? "instrument only" : "anatomy + instrument")
            << '\n';

  TrainOptions options;
  options.use_anatomy = !a.no_anatomy;
  options.checkpoint_path = run.path() / "model.ckpt";
  options.validation = validation.empty() ? nullptr : &validation;
  options.on_epoch = [](const EpochStats& e) {
    TrainReport one{{e}};
    std::cerr << report_log(one);
  };
  const TrainResult result = train(samples, a.net, a.loss, a.optim, options);
  run.note("model.ckpt");
  run.write("report.csv", report_csv(result.report));
  run.finish({{"net", to_json(a.net)},
              {"loss", {{"lambda", a.loss.lambda}, {"epsilon_dir", a.loss.epsilon_dir}}},
              {"optim",
               {{"peak_lr", a.optim.peak_lr},
                {"warmup_epochs", a.optim.warmup_epochs},
                {"total_epochs", a.optim.total_epochs},
                {"batch_size", a.optim.batch_size},
                {"beta1", a.optim.beta1},
                {"beta2", a.optim.beta2},
                {"adam_epsilon", a.optim.adam_epsilon},
                {"weight_decay", a.optim.weight_decay},
                {"seed", a.optim.seed}}},
              {"use_anatomy", options.use_anatomy},
              {"min_magnitude", a.min_magnitude},
              {"train_samples", samples.size()},
              {"validation_samples", validation.size()}});
}

// ---- evaluate / ablate ----

struct EvalArgs {
  std::string dataset;
  std::string run_dir;
  std::string split = "test";
  EvalConfig eval;
  bool dump_predictions = false;
};

void add_eval_options(CLI::App* c, EvalArgs& a) {
  c->add_option("--dataset", a.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c->add_option("--run-dir", a.run_dir, "Output run directory")->required()->configurable(false);
  c->add_option("--split", a.split, "Split to evaluate on")->capture_default_str();
  c->add_option("--thresholds", a.eval.thresholds, "Magnitude thresholds, descending")
      ->delimiter(',')
      ->capture_default_str();
  c->add_option("--stride", a.eval.stride, "Window stride for evaluation samples")->capture_default_str();
  c->add_option("--seed", a.eval.seed, "Random baseline seed")->capture_default_str();
  c->add_flag("--dump-predictions", a.dump_predictions, "Also write per-sample predictions.csv");
}

struct EvaluateArgs {
  EvalArgs common;
  std::vector<std::string> checkpoints;
};

struct AblateArgs {
  EvalArgs common;
  std::vector<std::string> anatomy;
  std::vector<std::string> instrument;
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  auto* c = app.add_subcommand("evaluate", "Direction accuracy of one model")->configurable();
  add_eval_options(c, a.common);
  c->add_option("--checkpoint", a.checkpoints, "Checkpoint(s) of one variant, one per horizon")
      ->required()
      ->delimiter(',');
}

void add_ablate(CLI::App& app, AblateArgs& a) {
  auto* c = app.add_subcommand("ablate", "Anatomy + instrument vs instrument-only vs random")->configurable();
  add_eval_options(c, a.common);
  c->add_option("--anatomy", a.anatomy, "Anatomy + instrument checkpoint(s), one per horizon")
      ->required()
      ->delimiter(',');
  c->add_option("--instrument", a.instrument, "Instrument-only checkpoint(s), one per horizon")
      ->required()
      ->delimiter(',');
}

// Loads every checkpoint before anything is written, keyed by its recorded horizon.
std::map<int, Checkpoint> load_by_horizon(const std::vector<std::string>& paths, const char* what) {
  std::map<int, Checkpoint> out;
  for (const auto& p : paths) {
    Checkpoint c = load_checkpoint(p);
    const int h = c.params.config.horizon;
    if (!out.emplace(h, std::move(c)).second) {
      throw ConfigError(std::string("two ") + what + " checkpoints for horizon " + std::to_string(h));
    }
  }
  return out;
}

std::vector<int> horizons_of(const std::map<int, Checkpoint>& ckpts) {
  std::vector<int> h;
  for (const auto& [k, v] : ckpts) h.push_back(k);
  return h;
}

void write_tables(RunDir& run, const AblationResult& result, bool dump) {
  run.write("table.csv", table_csv(result.table));
  run.write("table.txt", table_text(result.table));
  if (dump) run.write("predictions.csv", predictions_csv(result.predictions));
  std::cout << table_text(result.table);
}

json eval_json(const EvalArgs& a) {
  return {{"dataset", a.dataset},       {"split", a.split},   {"thresholds", a.eval.thresholds},
          {"horizons", a.eval.horizons}, {"stride", a.eval.stride}, {"seed", a.eval.seed}};
}

void run_evaluate(EvaluateArgs& a, const std::string& config_text) {
  const auto ckpts = load_by_horizon(a.checkpoints, "evaluated");
  a.common.eval.horizons = horizons_of(ckpts);
  a.common.eval.validate();
  const bool anat = ckpts.begin()->second.meta.use_anatomy;
  Variant v{anat ? kAnatomyRow : kInstrumentRow, {}};
  for (const auto& [h, c] : ckpts) {
    if (c.meta.use_anatomy != anat) throw ConfigError("evaluate takes checkpoints of a single variant");
    v.by_horizon[h] = &c;
  }
  const Dataset ds = load_dataset_verbose(a.common.dataset);
  const auto samples =
      evaluation_samples(ds, a.common.split, ckpts.begin()->second.params.config.seq_len, a.common.eval);
  const AblationResult result = evaluate_variants(samples, {v}, a.common.eval, a.common.dump_predictions);

  RunDir run(a.common.run_dir, "evaluate");
  run.write("config.toml", config_text);
  write_tables(run, result, a.common.dump_predictions);
  json meta = json::array();
  for (const auto& [h, c] : ckpts) meta.push_back(training_meta_json(c.meta));
  run.finish({{"eval", eval_json(a.common)}, {"checkpoints", a.checkpoints}, {"checkpoint_meta", meta}});
}

void run_ablate(AblateArgs& a, const std::string& config_text) {
  const auto anat = load_by_horizon(a.anatomy, "anatomy + instrument");
  const auto inst = load_by_horizon(a.instrument, "instrument-only");
  if (horizons_of(anat) != horizons_of(inst)) {
    throw ConfigError("anatomy + instrument and instrument-only checkpoints cover different horizons");
  }
  for (const auto& [h, c] : anat) {
    if (!c.meta.use_anatomy) throw ConfigError("--anatomy checkpoint for horizon " + std::to_string(h) +
                                               " was trained without anatomy");
  }
  for (const auto& [h, c] : inst) {
    if (c.meta.use_anatomy) throw ConfigError("--instrument checkpoint for horizon " + std::to_string(h) +
                                              " was trained with anatomy");
  }
  a.common.eval.horizons = horizons_of(anat);
  a.common.eval.validate();
  std::map<int, VariantPair> pairs;
  for (const auto& [h, c] : anat) pairs[h] = {c, inst.at(h)};

  const Dataset ds = load_dataset_verbose(a.common.dataset);
  const AblationResult result = ablate(ds, a.common.split, pairs, a.common.eval, a.common.dump_predictions);

  RunDir run(a.common.run_dir, "ablate");
  run.write("config.toml", config_text);
  write_tables(run, result, a.common.dump_predictions);
  run.finish({{"eval", eval_json(a.common)}, {"anatomy", a.anatomy}, {"instrument", a.instrument}});
}

// ---- forecast ----

struct ForecastArgs {
  std::string checkpoint;
  std::string dataset;
  std::string video;
  std::int64_t t = -1;
  std::string run_dir;
};

void add_forecast(CLI::App& app, ForecastArgs& a) {
  auto* c = app.add_subcommand("forecast", "Predicted and true future centers for one window")->configurable();
  c->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  c->add_option("--dataset", a.dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c->add_option("--video", a.video, "Video id")->required();
  c->add_option("--t", a.t, "Frame index of the last window frame")->required();
  c->add_option("--run-dir", a.run_dir, "Output run directory")->required()->configurable(false);
}

json box_json(const BBox& b) { return {{"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h}}; }

void run_forecast(const ForecastArgs& a, const std::string& config_text) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const Dataset ds = load_dataset_verbose(a.dataset);
  const VideoDetections& video = ds.video(a.video);
  const int s = ckpt.params.config.seq_len;
  const int f = ckpt.params.config.horizon;
  const std::int64_t last = a.t - video.first_frame();
  if (last < s - 1) {
    throw InputError("t = " + std::to_string(a.t) + " leaves fewer than " + std::to_string(s) +
                     " frames of history in " + a.video);
  }
  if (last + f >= video.length()) {
    throw InputError("t = " + std::to_string(a.t) + " is within " + std::to_string(f) + " frames of the end of " +
                     a.video + "; no ground truth for the horizon");
  }
  const ClassId inst = ClassId::instrument();
  for (std::int64_t i = last; i <= last + f; ++i) {
    if (!video.frame(i).present(inst)) {
      throw InputError("instrument absent at frame " + std::to_string(video.first_frame() + i) + " of " + a.video);
    }
  }

  const Prediction pred = forward_masked(ckpt.params, video.window(last, s), ckpt.meta.use_anatomy);
  const BBox& at_t = video.frame(last).box(inst);
  json predicted = json::array(), truth = json::array(), deltas = json::array();
  double px = at_t.cx, py = at_t.cy;
  for (int k = 0; k < f; ++k) {
    px += pred.deltas(k, 0);
    py += pred.deltas(k, 1);
    predicted.push_back({{"frame", a.t + k + 1}, {"cx", px}, {"cy", py}});
    const BBox& g = video.frame(last + k + 1).box(inst);
    truth.push_back({{"frame", a.t + k + 1}, {"cx", g.cx}, {"cy", g.cy}});
    deltas.push_back({pred.deltas(k, 0), pred.deltas(k, 1), pred.deltas(k, 2), pred.deltas(k, 3)});
  }
  json anatomy = json::array();
  const FrameDetections& frame_t = video.frame(last);
  for (int c = 0; c < kNumAnatomyClasses; ++c) {
    if (!frame_t.present(ClassId(c))) continue;
    json b = box_json(frame_t.box(ClassId(c)));
    b["class"] = c;
    b["name"] = ds.class_names.at(static_cast<std::size_t>(c));
    anatomy.push_back(b);
  }
  const json out{{"video_id", a.video},
                 {"t", a.t},
                 {"horizon", f},
                 {"use_anatomy", ckpt.meta.use_anatomy},
                 {"instrument_at_t", box_json(at_t)},
                 {"predicted_deltas", deltas},
                 {"predicted_centers", predicted},
                 {"ground_truth_centers", truth},
                 {"anatomy_at_t", anatomy}};

  RunDir run(a.run_dir, "forecast");
  run.write("config.toml", config_text);
  run.write("forecast.json", dump_json(out));
  std::cout << out.dump(2) << '\n';
  run.finish({{"checkpoint", a.checkpoint}, {"dataset", a.dataset}, {"video", a.video}, {"t", a.t}});
}

// Unset vector options print their default as a quoted string, explicit ones as an array.
// Giving unset ones their default as results makes both print the same way, so a run's
// config.toml is identical whether values came from flags, a config file or defaults.
void pin_vector_defaults(CLI::App* sub) {
  for (CLI::Option* opt : sub->get_options()) {
    const std::string d = opt->get_default_str();
    if (opt->count() > 0 || d.size() < 2 || d.front() != '[') continue;
    for (const auto& item : CLI::detail::split(d.substr(1, d.size() - 2), ',')) opt->add_result(item);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instrument trajectory forecasting toolkit"};
  app.set_config("--config", "", "TOML config file; command-line flags override it");
  app.require_subcommand(1);
  app.fallthrough();

  GenerateArgs gen;
  DescribeArgs desc;
  TrainArgs tr;
  EvaluateArgs ev;
  AblateArgs ab;
  ForecastArgs fc;
  add_generate(app, gen);
  add_describe(app, desc);
  add_train(app, tr);
  add_evaluate(app, ev);
  add_ablate(app, ab);
  add_forecast(app, fc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigFailure;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    pin_vector_defaults(sub);
    const std::string name = sub->get_name();
    const std::string config_text = "[" + name + "]\n" + sub->config_to_str(true, false);
    if (name == "generate") run_generate(gen, config_text);
    if (name == "describe") run_describe(desc, config_text);
    if (name == "train") run_train(tr, config_text);
    if (name == "evaluate") run_evaluate(ev, config_text);
    if (name == "ablate") run_ablate(ab, config_text);
    if (name == "forecast") run_forecast(fc, config_text);
  } catch (const trajcast::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataFailure;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUnexpected;
  }
  return kOk;
}
