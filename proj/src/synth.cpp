#include "trajcast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

namespace trajcast {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream per (video, purpose). Anatomy and instrument never share a stream,
// so in decoupled mode the instrument track does not depend on the anatomy settings.
enum class Stream : std::uint64_t { layout = 1, anatomy_noise, motion, instrument_noise };

std::mt19937_64 stream_rng(std::uint64_t seed, int video, Stream s) {
  const std::uint64_t v = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(video) + 1));
  return std::mt19937_64(splitmix64(v + static_cast<std::uint64_t>(s)));
}

double snap(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return std::round(v / kCoordinateStep) * kCoordinateStep;
}

BBox noisy_box(const BBox& truth, double sigma, std::mt19937_64& rng) {
  if (sigma == 0.0) return {snap(truth.cx), snap(truth.cy), snap(truth.w), snap(truth.h)};
  std::normal_distribution<double> noise(0.0, sigma);
  const double cx = truth.cx + noise(rng);
  const double cy = truth.cy + noise(rng);
  const double w = truth.w + noise(rng);
  const double h = truth.h + noise(rng);
  return {snap(cx), snap(cy), snap(w), snap(h)};
}

std::vector<Vec2> place_centers(int count, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coord(0.1, 0.9);
  double spacing = std::min(0.2, 0.6 / std::sqrt(static_cast<double>(count)));
  std::vector<Vec2> centers;
  int attempts = 0;
  while (static_cast<int>(centers.size()) < count) {
    const Vec2 c{coord(rng), coord(rng)};
    const bool clear = std::all_of(centers.begin(), centers.end(), [&](const Vec2& o) {
      return std::hypot(c.x - o.x, c.y - o.y) >= spacing;
    });
    if (clear) centers.push_back(c);
    if (++attempts > 20000) {
      // Jammed packing; start over with a smaller spacing.
      centers.clear();
      spacing *= 0.8;
      attempts = 0;
    }
  }
  return centers;
}

void check(bool ok, const char* field, const std::string& why) {
  if (!ok) throw ConfigError(std::string("scene config field '") + field + "' " + why);
}

}  // namespace

std::string_view to_string(Coupling c) {
  return c == Coupling::anatomy_coupled ? "anatomy_coupled" : "decoupled";
}

Coupling parse_coupling(std::string_view text) {
  if (text == "anatomy_coupled" || text == "coupled") return Coupling::anatomy_coupled;
  if (text == "decoupled") return Coupling::decoupled;
  throw ConfigError("scene config field 'coupling' must be anatomy_coupled or decoupled, got '" +
                    std::string(text) + "'");
}

void SceneConfig::validate() const {
  check(n_videos >= 1, "n_videos", "must be >= 1");
  check(window_length >= 1, "window_length", "must be >= 1");
  check(horizon >= 1, "horizon", "must be >= 1");
  check(frames_per_video > window_length + horizon, "frames_per_video",
        "must exceed window_length + horizon");
  check(visible_anatomy_count >= 3 && visible_anatomy_count <= kNumAnatomyClasses,
        "visible_anatomy_count", "must be in [3, 15]");
  check(anatomy_jitter_sigma >= 0.0 && std::isfinite(anatomy_jitter_sigma), "anatomy_jitter_sigma",
        "must be finite and >= 0");
  check(instrument_jitter_sigma >= 0.0 && std::isfinite(instrument_jitter_sigma),
        "instrument_jitter_sigma", "must be finite and >= 0");
  check(detection_dropout_prob >= 0.0 && detection_dropout_prob < 1.0, "detection_dropout_prob",
        "must be in [0, 1)");
  check(instrument_speed >= 0.0 && std::isfinite(instrument_speed), "instrument_speed",
        "must be finite and >= 0");
  check(speed_noise_sigma >= 0.0 && std::isfinite(speed_noise_sigma), "speed_noise_sigma",
        "must be finite and >= 0");
  check(dwell_min >= 0, "dwell_min", "must be >= 0");
  check(dwell_max >= dwell_min, "dwell_max", "must be >= dwell_min");
  check(validation_fraction >= 0.0 && validation_fraction <= 1.0, "validation_fraction",
        "must be in [0, 1]");
  check(test_fraction >= 0.0 && test_fraction <= 1.0, "test_fraction", "must be in [0, 1]");
  check(validation_fraction + test_fraction <= 1.0, "test_fraction",
        "plus validation_fraction must not exceed 1");
}

json to_json(const SceneConfig& cfg) {
  return json{{"n_videos", cfg.n_videos},
              {"frames_per_video", cfg.frames_per_video},
              {"visible_anatomy_count", cfg.visible_anatomy_count},
              {"anatomy_jitter_sigma", cfg.anatomy_jitter_sigma},
              {"instrument_jitter_sigma", cfg.instrument_jitter_sigma},
              {"detection_dropout_prob", cfg.detection_dropout_prob},
              {"instrument_speed", cfg.instrument_speed},
              {"speed_noise_sigma", cfg.speed_noise_sigma},
              {"dwell_min", cfg.dwell_min},
              {"dwell_max", cfg.dwell_max},
              {"coupling", std::string(to_string(cfg.coupling))},
              {"seed", cfg.seed},
              {"window_length", cfg.window_length},
              {"horizon", cfg.horizon},
              {"validation_fraction", cfg.validation_fraction},
              {"test_fraction", cfg.test_fraction}};
}

SceneConfig scene_config_from_json(const json& j) {
  SceneConfig c;
  try {
    c.n_videos = j.value("n_videos", c.n_videos);
    c.frames_per_video = j.value("frames_per_video", c.frames_per_video);
    c.visible_anatomy_count = j.value("visible_anatomy_count", c.visible_anatomy_count);
    c.anatomy_jitter_sigma = j.value("anatomy_jitter_sigma", c.anatomy_jitter_sigma);
    c.instrument_jitter_sigma = j.value("instrument_jitter_sigma", c.instrument_jitter_sigma);
    c.detection_dropout_prob = j.value("detection_dropout_prob", c.detection_dropout_prob);
    c.instrument_speed = j.value("instrument_speed", c.instrument_speed);
    c.speed_noise_sigma = j.value("speed_noise_sigma", c.speed_noise_sigma);
    c.dwell_min = j.value("dwell_min", c.dwell_min);
    c.dwell_max = j.value("dwell_max", c.dwell_max);
    c.coupling = parse_coupling(j.value("coupling", std::string(to_string(c.coupling))));
    c.seed = j.value("seed", c.seed);
    c.window_length = j.value("window_length", c.window_length);
    c.horizon = j.value("horizon", c.horizon);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad scene config: ") + e.what());
  }
  return c;
}

ClassId ScenePhaseRule::target(std::int64_t phase) const {
  if (cycle.empty()) throw ConfigError("phase rule has no targets");
  const auto n = static_cast<std::int64_t>(cycle.size());
  return cycle[static_cast<std::size_t>((static_cast<std::int64_t>(start) + phase) % n)];
}

std::string video_name(int index) {
  std::ostringstream os;
  os << "video_" << std::setw(3) << std::setfill('0') << index;
  return os.str();
}

GeneratedVideo generate_video(const SceneConfig& cfg, int index) {
  cfg.validate();
  auto layout_rng = stream_rng(cfg.seed, index, Stream::layout);
  auto anatomy_rng = stream_rng(cfg.seed, index, Stream::anatomy_noise);
  auto motion_rng = stream_rng(cfg.seed, index, Stream::motion);
  auto inst_rng = stream_rng(cfg.seed, index, Stream::instrument_noise);

  const int n_anat = cfg.visible_anatomy_count;
  const std::vector<Vec2> centers = place_centers(n_anat, layout_rng);
  std::vector<BBox> anatomy(n_anat);
  std::uniform_real_distribution<double> anat_size(0.05, 0.15);
  for (int k = 0; k < n_anat; ++k) {
    const double w = anat_size(layout_rng);
    const double h = anat_size(layout_rng);
    anatomy[k] = {centers[k].x, centers[k].y, w, h};
  }

  SceneTrace trace;
  trace.anatomy_center.assign(kNumAnatomyClasses, Vec2{});
  for (int k = 0; k < n_anat; ++k) {
    trace.anatomy_center[k] = centers[k];
    trace.rule.cycle.emplace_back(k);
  }
  trace.rule.start = std::uniform_int_distribution<std::size_t>(0, n_anat - 1)(layout_rng);

  std::uniform_real_distribution<double> coord(0.1, 0.9);
  std::uniform_real_distribution<double> inst_size(0.08, 0.15);
  const double inst_w = inst_size(motion_rng);
  const double inst_h = inst_size(motion_rng);
  Vec2 pos{coord(motion_rng), coord(motion_rng)};

  std::int64_t phase = 0;
  auto pick_target = [&](std::int64_t p) {
    if (cfg.coupling == Coupling::anatomy_coupled) return centers[trace.rule.target(p).index()];
    const double x = coord(motion_rng);
    return Vec2{x, coord(motion_rng)};
  };
  Vec2 target = pick_target(phase);
  int dwell_left = 0;
  std::uniform_int_distribution<int> dwell(cfg.dwell_min, cfg.dwell_max);
  std::normal_distribution<double> speed_noise(0.0, cfg.speed_noise_sigma > 0.0 ? cfg.speed_noise_sigma : 1.0);
  std::bernoulli_distribution drop_anat(cfg.detection_dropout_prob);
  std::bernoulli_distribution drop_inst(cfg.detection_dropout_prob);

  std::vector<FrameDetections> frames(cfg.frames_per_video);
  for (int t = 0; t < cfg.frames_per_video; ++t) {
    FrameDetections& fr = frames[t];
    for (int k = 0; k < n_anat; ++k) {
      const BBox obs = noisy_box(anatomy[k], cfg.anatomy_jitter_sigma, anatomy_rng);
      if (!drop_anat(anatomy_rng)) fr.set(ClassId(k), obs);
    }
    const BBox inst_obs =
        noisy_box({pos.x, pos.y, inst_w, inst_h}, cfg.instrument_jitter_sigma, inst_rng);
    if (!drop_inst(inst_rng)) fr.set(ClassId::instrument(), inst_obs);

    trace.instrument_center.push_back(pos);
    trace.target_point.push_back(target);
    trace.phase.push_back(phase);
    trace.moving.push_back(dwell_left == 0);

    if (dwell_left > 0) {
      if (--dwell_left == 0) target = pick_target(++phase);
      continue;
    }
    const double dx = target.x - pos.x;
    const double dy = target.y - pos.y;
    const double dist = std::hypot(dx, dy);
    double step = cfg.instrument_speed;
    if (cfg.speed_noise_sigma > 0.0) step += speed_noise(motion_rng);
    step = std::max(step, 0.0);
    if (dist <= step) {
      pos = target;
      dwell_left = dwell(motion_rng);
      if (dwell_left == 0) target = pick_target(++phase);
    } else {
      pos.x += dx / dist * step;
      pos.y += dy / dist * step;
    }
  }
  return {VideoDetections(video_name(index), 0, std::move(frames)), std::move(trace)};
}

Dataset generate_dataset(const SceneConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.class_names = default_class_names();
  for (int i = 0; i < cfg.n_videos; ++i) ds.videos.push_back(generate_video(cfg, i).detections);

  const int n = cfg.n_videos;
  const int n_test = static_cast<int>(std::lround(n * cfg.test_fraction));
  const int n_val = std::min(n - n_test, static_cast<int>(std::lround(n * cfg.validation_fraction)));
  const int n_train = n - n_test - n_val;
  for (int i = 0; i < n; ++i) {
    auto& list = i < n_train ? ds.split.forecaster_train
                 : i < n_train + n_val ? ds.split.validation
                                       : ds.split.test;
    list.push_back(video_name(i));
  }
  ds.producer = json{{"generator", "trajcast-synth"}, {"scene", to_json(cfg)}};
  return ds;
}

Dataset generate_dataset(const SceneConfig& cfg, const std::filesystem::path& out_dir) {
  Dataset ds = generate_dataset(cfg);
  write_dataset(out_dir, ds);
  return ds;
}

DatasetSummary describe_dataset(const Dataset& dataset, int window_length) {
  DatasetSummary sum;
  sum.n_videos = static_cast<int>(dataset.videos.size());
  sum.window_length = window_length;
  sum.horizon = 8;
  sum.thresholds = {0.0, 0.05, 0.1};
  sum.sample_counts.assign(sum.thresholds.size(), 0);
  sum.presence_rate.assign(kNumClasses, 0.0);
  sum.producer = dataset.producer;

  std::vector<std::int64_t> present(kNumClasses, 0);
  for (const auto& video : dataset.videos) {
    sum.n_frames += video.length();
    for (const auto& fr : video.frames()) {
      for (int k = 0; k < kNumClasses; ++k) present[k] += fr.present(ClassId(k)) ? 1 : 0;
    }
    const auto samples = extract_samples(video, window_length, sum.horizon, 1);
    for (std::size_t i = 0; i < sum.thresholds.size(); ++i) {
      for (const auto& s : samples) sum.sample_counts[i] += passes_magnitude(s, sum.thresholds[i]);
    }
  }
  for (int k = 0; k < kNumClasses; ++k) {
    sum.presence_rate[k] =
        sum.n_frames > 0 ? static_cast<double>(present[k]) / static_cast<double>(sum.n_frames) : 0.0;
  }
  return sum;
}

DatasetSummary describe_dataset(const std::filesystem::path& dir, int window_length) {
  return describe_dataset(load_dataset(dir), window_length);
}

json to_json(const DatasetSummary& s) {
  json counts = json::array();
  for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
    counts.push_back({{"threshold", s.thresholds[i]}, {"samples", s.sample_counts[i]}});
  }
  return json{{"videos", s.n_videos},
              {"frames", s.n_frames},
              {"window_length", s.window_length},
              {"horizon", s.horizon},
              {"sample_counts", counts},
              {"presence_rate", s.presence_rate},
              {"producer", s.producer}};
}

std::string format_summary(const DatasetSummary& s) {
  std::ostringstream os;
  os << "videos: " << s.n_videos << "  frames: " << s.n_frames << "  (s=" << s.window_length
     << ", f=" << s.horizon << ", stride 1)\n";
  for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
    os << "  samples with |disp8| " << (s.thresholds[i] == 0.0 ? ">= " : "> ") << s.thresholds[i]
       << ": " << s.sample_counts[i] << "\n";
  }
  os << "  presence rate per class:";
  os << std::fixed << std::setprecision(3);
  for (int k = 0; k < kNumClasses; ++k) os << (k % 8 == 0 ? "\n   " : "") << " " << s.presence_rate[k];
  os << "\n";
  return os.str();
}

}  // namespace trajcast
