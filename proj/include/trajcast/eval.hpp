#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "trajcast/checkpoint.hpp"
#include "trajcast/dataio.hpp"

namespace trajcast {

struct EvalConfig {
  /// Non-negative, strictly descending.
  std::vector<double> thresholds{0.1, 0.05, 0.0};
  std::vector<int> horizons{8, 16};
  /// Seeds the random baseline.
  std::uint64_t seed = 0;
  /// Window stride when extracting evaluation samples.
  int stride = 1;

  void validate() const;
};

struct DirectionScore {
  /// Percentage in [0, 100] over the `total` scored samples; NaN in a table cell with none.
  double accuracy = 0.0;
  std::int64_t total = 0;
  std::int64_t matches = 0;
  /// Predictions with zero summed center displacement, all scored as misses.
  std::int64_t zero_predictions = 0;
  /// Targets with zero summed center displacement, left out of `total`.
  std::int64_t dropped_targets = 0;
};

/// Compares the direction of the summed center displacement over each horizon.
/// EvalError on empty input or if every target is dropped, ShapeError on mismatched shapes.
DirectionScore direction_score(const std::vector<DeltaTrajectory>& predictions,
                               const std::vector<DeltaTrajectory>& targets);
double direction_accuracy(const std::vector<DeltaTrajectory>& predictions,
                          const std::vector<DeltaTrajectory>& targets);

/// One uniformly drawn label per target (zero targets dropped as above).
DirectionScore random_score(const std::vector<DeltaTrajectory>& targets, std::uint64_t seed);
double random_baseline(const std::vector<DeltaTrajectory>& targets, std::uint64_t seed);

inline constexpr const char* kAnatomyRow = "Anatomy + Instrument";
inline constexpr const char* kInstrumentRow = "Instrument";
inline constexpr const char* kRandomRow = "Random";

struct AccuracyCell {
  int horizon = 0;
  double threshold = 0.0;
  DirectionScore score;
};

struct AccuracyRow {
  std::string name;
  std::vector<AccuracyCell> cells;

  const AccuracyCell& cell(int horizon, double threshold) const;
};

struct AccuracyTable {
  std::vector<int> horizons;
  std::vector<double> thresholds;
  std::vector<AccuracyRow> rows;

  const AccuracyRow& row(const std::string& name) const;
};

/// One line per (variant, horizon, sample) for external plotting.
struct SamplePrediction {
  std::string variant;
  int horizon = 0;
  std::string video_id;
  std::int64_t t = 0;
  double gt_magnitude8 = 0.0;
  Vec2 target;
  Vec2 predicted;
};

struct AblationResult {
  AccuracyTable table;
  std::vector<SamplePrediction> predictions;
};

/// A model row of the table: one checkpoint per horizon.
struct Variant {
  std::string name;
  std::map<int, const Checkpoint*> by_horizon;
};

/// Rows for each variant plus the random baseline, on one shared sample set taken from
/// `samples` (which must carry at least max(horizons) target frames). Each checkpoint runs
/// with the anatomy flag recorded in its metadata. ConfigError when a horizon has no
/// checkpoint, a checkpoint's horizon disagrees with its key, or window lengths differ.
/// A threshold nobody passes gives cells with total 0 rather than an error.
AblationResult evaluate_variants(const std::vector<Sample>& samples, const std::vector<Variant>& variants,
                                 const EvalConfig& cfg, bool keep_predictions = false);

/// Samples from the named split at the longest configured horizon, for checkpoints with
/// window length `seq_len`.
std::vector<Sample> evaluation_samples(const Dataset& dataset, const std::string& split, int seq_len,
                                       const EvalConfig& cfg);

struct VariantPair {
  Checkpoint with_anatomy;
  Checkpoint instrument_only;
};

/// evaluate_variants with the anatomy + instrument and instrument-only rows.
AblationResult ablate(const std::vector<Sample>& samples, const std::map<int, VariantPair>& checkpoints,
                      const EvalConfig& cfg, bool keep_predictions = false);

/// Extracts samples at the longest configured horizon from the named split and runs ablate.
AblationResult ablate(const Dataset& dataset, const std::string& split,
                      const std::map<int, VariantPair>& checkpoints, const EvalConfig& cfg,
                      bool keep_predictions = false);

std::string table_csv(const AccuracyTable& table);
std::string table_text(const AccuracyTable& table);
std::string predictions_csv(const std::vector<SamplePrediction>& predictions);

}  // namespace trajcast
