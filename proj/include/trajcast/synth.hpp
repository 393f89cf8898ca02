#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "trajcast/dataio.hpp"

namespace trajcast {

enum class Coupling { anatomy_coupled, decoupled };

std::string_view to_string(Coupling c);
/// Accepts "anatomy_coupled"/"coupled" and "decoupled"; throws ConfigError otherwise.
Coupling parse_coupling(std::string_view text);

struct SceneConfig {
  int n_videos = 20;
  int frames_per_video = 2000;
  /// Anatomy classes 0..count-1 are visible in every video.
  int visible_anatomy_count = 5;
  double anatomy_jitter_sigma = 0.005;
  double instrument_jitter_sigma = 0.005;
  double detection_dropout_prob = 0.05;
  /// Normalized units per frame.
  double instrument_speed = 0.01;
  double speed_noise_sigma = 0.002;
  int dwell_min = 5;
  int dwell_max = 30;
  Coupling coupling = Coupling::anatomy_coupled;
  std::uint64_t seed = 0;
  /// Shortest usable video is window_length + horizon + 1 frames.
  int window_length = 64;
  int horizon = 16;
  double validation_fraction = 0.1;
  double test_fraction = 0.2;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

nlohmann::json to_json(const SceneConfig& cfg);
SceneConfig scene_config_from_json(const nlohmann::json& j);

/// Target anatomy per scene phase: phase p targets cycle[(start + p) % cycle.size()].
struct ScenePhaseRule {
  std::vector<ClassId> cycle;
  std::size_t start = 0;

  ClassId target(std::int64_t phase) const;
};

/// Noise-free state of the generator, recorded for every frame.
struct SceneTrace {
  std::vector<Vec2> instrument_center;
  std::vector<Vec2> target_point;
  std::vector<std::int64_t> phase;
  std::vector<bool> moving;
  /// Noise-free anatomy centers, indexed by class (absent classes hold (0,0)).
  std::vector<Vec2> anatomy_center;
  ScenePhaseRule rule;
};

struct GeneratedVideo {
  VideoDetections detections;
  SceneTrace trace;
};

std::string video_name(int index);

/// One video; independent of every other video index.
GeneratedVideo generate_video(const SceneConfig& cfg, int index);

/// All videos plus the split table. Identical configs give identical datasets.
Dataset generate_dataset(const SceneConfig& cfg);
Dataset generate_dataset(const SceneConfig& cfg, const std::filesystem::path& out_dir);

/// Emitted coordinates are snapped to multiples of this step so that box differences
/// and their running sums are exact in double precision.
inline constexpr double kCoordinateStep = 1.0 / (1 << 20);

struct DatasetSummary {
  int n_videos = 0;
  std::int64_t n_frames = 0;
  int window_length = 64;
  int horizon = 8;
  std::vector<double> thresholds;
  std::vector<std::int64_t> sample_counts;
  std::vector<double> presence_rate;
  nlohmann::json producer;
};

/// Sample counts at thresholds 0, 0.05 and 0.1 (f = 8, stride 1) and per-class presence.
DatasetSummary describe_dataset(const Dataset& dataset, int window_length = 64);
DatasetSummary describe_dataset(const std::filesystem::path& dir, int window_length = 64);
nlohmann::json to_json(const DatasetSummary& summary);
std::string format_summary(const DatasetSummary& summary);

}  // namespace trajcast
