#include "trajcast/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "trajcast/net.hpp"

namespace trajcast {

void EvalConfig::validate() const {
  if (thresholds.empty()) throw ConfigError("eval config field 'thresholds' is empty");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] >= 0.0) || !std::isfinite(thresholds[i])) {
      throw ConfigError("eval config field 'thresholds' must be finite and >= 0");
    }
    if (i > 0 && !(thresholds[i] < thresholds[i - 1])) {
      throw ConfigError("eval config field 'thresholds' must be strictly descending");
    }
  }
  if (horizons.empty()) throw ConfigError("eval config field 'horizons' is empty");
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    if (horizons[i] < 1) throw ConfigError("eval config field 'horizons' must be >= 1");
    if (std::count(horizons.begin(), horizons.end(), horizons[i]) > 1) {
      throw ConfigError("eval config field 'horizons' has duplicates");
    }
  }
  if (stride < 1) throw ConfigError("eval config field 'stride' must be >= 1");
}

namespace {

bool is_zero(Vec2 v) { return v.x == 0.0 && v.y == 0.0; }

// Labels are compared on summed center displacement vectors.
DirectionScore score_vectors(const std::vector<Vec2>& predicted, const std::vector<Vec2>& target) {
  DirectionScore s;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (is_zero(target[i])) {
      ++s.dropped_targets;
      continue;
    }
    ++s.total;
    if (is_zero(predicted[i])) {
      ++s.zero_predictions;
      continue;
    }
    if (direction_of(predicted[i]) == direction_of(target[i])) ++s.matches;
  }
  s.accuracy = s.total == 0 ? std::numeric_limits<double>::quiet_NaN() : 0.0;
  if (s.total > 0) s.accuracy = 100.0 * static_cast<double>(s.matches) / static_cast<double>(s.total);
  return s;
}

DirectionScore score_random(const std::vector<Vec2>& target, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, 3);
  DirectionScore s;
  for (const Vec2& v : target) {
    if (is_zero(v)) {
      ++s.dropped_targets;
      continue;
    }
    ++s.total;
    if (static_cast<Direction>(pick(rng)) == direction_of(v)) ++s.matches;
  }
  s.accuracy = s.total == 0 ? std::numeric_limits<double>::quiet_NaN() : 0.0;
  if (s.total > 0) s.accuracy = 100.0 * static_cast<double>(s.matches) / static_cast<double>(s.total);
  return s;
}

DirectionScore require_scored(const DirectionScore& s) {
  if (s.total == 0) throw EvalError("no sample has a non-zero target displacement");
  return s;
}

std::vector<Vec2> summed(const std::vector<DeltaTrajectory>& trajectories) {
  std::vector<Vec2> out;
  out.reserve(trajectories.size());
  for (const auto& t : trajectories) out.push_back(t.summed_center());
  return out;
}

}  // namespace

DirectionScore direction_score(const std::vector<DeltaTrajectory>& predictions,
                               const std::vector<DeltaTrajectory>& targets) {
  if (targets.empty()) throw EvalError("direction accuracy of an empty sample list");
  if (predictions.size() != targets.size()) {
    throw ShapeError(std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(targets.size()) + " targets");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (predictions[i].horizon() != targets[i].horizon()) {
      throw ShapeError("prediction " + std::to_string(i) + " has horizon " +
                       std::to_string(predictions[i].horizon()) + ", target has " +
                       std::to_string(targets[i].horizon()));
    }
  }
  return require_scored(score_vectors(summed(predictions), summed(targets)));
}

double direction_accuracy(const std::vector<DeltaTrajectory>& predictions,
                          const std::vector<DeltaTrajectory>& targets) {
  return direction_score(predictions, targets).accuracy;
}

DirectionScore random_score(const std::vector<DeltaTrajectory>& targets, std::uint64_t seed) {
  if (targets.empty()) throw EvalError("random baseline of an empty sample list");
  return require_scored(score_random(summed(targets), seed));
}

double random_baseline(const std::vector<DeltaTrajectory>& targets, std::uint64_t seed) {
  return random_score(targets, seed).accuracy;
}

const AccuracyCell& AccuracyRow::cell(int horizon, double threshold) const {
  for (const auto& c : cells) {
    if (c.horizon == horizon && c.threshold == threshold) return c;
  }
  throw EvalError("row '" + name + "' has no cell for horizon " + std::to_string(horizon));
}

const AccuracyRow& AccuracyTable::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw EvalError("accuracy table has no row '" + name + "'");
}

namespace {

void check_checkpoint(const Checkpoint& c, int horizon, const char* which) {
  if (c.meta.horizon != horizon || c.params.config.horizon != horizon) {
    throw ConfigError(std::string(which) + " checkpoint predicts " +
                      std::to_string(c.params.config.horizon) + " frames but is listed for horizon " +
                      std::to_string(horizon));
  }
}

std::vector<Vec2> predict_summed(const Checkpoint& ckpt, const std::vector<Sample>& samples) {
  constexpr std::size_t kBatch = 64;
  const int f = ckpt.params.config.horizon;
  std::vector<Vec2> out;
  out.reserve(samples.size());
  std::vector<const DetectionWindow*> windows;
  for (std::size_t start = 0; start < samples.size(); start += kBatch) {
    const std::size_t n = std::min(kBatch, samples.size() - start);
    windows.clear();
    for (std::size_t i = 0; i < n; ++i) windows.push_back(&samples[start + i].window);
    const Matrix tokens = stack_tokens(windows, ckpt.params.config.seq_len, ckpt.meta.use_anatomy);
    const BatchOutput batch = forward_batch(ckpt.params, tokens);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(output_row_to_deltas(batch.outputs, static_cast<int>(i), f).summed_center());
    }
  }
  return out;
}

template <typename T>
std::vector<T> pick(const std::vector<T>& all, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace

AblationResult evaluate_variants(const std::vector<Sample>& samples, const std::vector<Variant>& variants,
                                 const EvalConfig& cfg, bool keep_predictions) {
  cfg.validate();
  if (samples.empty()) throw EvalError("no evaluation samples");
  if (variants.empty()) throw ConfigError("no model variants to evaluate");
  const int max_h = *std::max_element(cfg.horizons.begin(), cfg.horizons.end());
  int seq_len = -1;
  for (const Variant& v : variants) {
    for (int h : cfg.horizons) {
      const auto it = v.by_horizon.find(h);
      if (it == v.by_horizon.end() || it->second == nullptr) {
        throw ConfigError("no " + v.name + " checkpoint given for horizon " + std::to_string(h));
      }
      const Checkpoint& c = *it->second;
      check_checkpoint(c, h, v.name.c_str());
      if (seq_len < 0) seq_len = c.params.config.seq_len;
      if (c.params.config.seq_len != seq_len) {
        throw ConfigError("checkpoints disagree on window length (" + std::to_string(seq_len) + " vs " +
                          std::to_string(c.params.config.seq_len) + ")");
      }
    }
  }
  for (const auto& s : samples) {
    if (s.target.horizon() < max_h) {
      throw ConfigError("evaluation samples carry " + std::to_string(s.target.horizon()) +
                        " target frames, need " + std::to_string(max_h));
    }
  }

  // Shared filter per threshold, on the horizon-independent 8-frame displacement.
  std::vector<std::vector<std::size_t>> kept(cfg.thresholds.size());
  for (std::size_t k = 0; k < cfg.thresholds.size(); ++k) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (passes_magnitude(samples[i], cfg.thresholds[k])) kept[k].push_back(i);
    }
  }

  AblationResult result;
  AccuracyTable& table = result.table;
  table.horizons = cfg.horizons;
  table.thresholds = cfg.thresholds;
  for (const Variant& v : variants) table.rows.push_back({v.name, {}});
  table.rows.push_back({kRandomRow, {}});

  for (std::size_t hi = 0; hi < cfg.horizons.size(); ++hi) {
    const int h = cfg.horizons[hi];
    std::vector<Vec2> target;
    target.reserve(samples.size());
    for (const auto& s : samples) target.push_back(s.target.summed_center(h));
    std::vector<std::vector<Vec2>> predicted;
    for (const Variant& v : variants) predicted.push_back(predict_summed(*v.by_horizon.at(h), samples));

    for (std::size_t k = 0; k < cfg.thresholds.size(); ++k) {
      const double thr = cfg.thresholds[k];
      const std::vector<Vec2> tgt = pick(target, kept[k]);
      for (std::size_t v = 0; v < variants.size(); ++v) {
        table.rows[v].cells.push_back({h, thr, score_vectors(pick(predicted[v], kept[k]), tgt)});
      }
      const std::uint64_t cell_seed = cfg.seed + 1000003ULL * (hi * cfg.thresholds.size() + k);
      table.rows.back().cells.push_back({h, thr, score_random(tgt, cell_seed)});
    }

    if (keep_predictions) {
      for (std::size_t v = 0; v < variants.size(); ++v) {
        for (std::size_t i = 0; i < samples.size(); ++i) {
          const auto& s = samples[i];
          result.predictions.push_back({variants[v].name, h, s.window.video_id(), s.window.t(),
                                        s.gt_displacement8.norm(), target[i], predicted[v][i]});
        }
      }
    }
  }
  return result;
}

std::vector<Sample> evaluation_samples(const Dataset& dataset, const std::string& split, int seq_len,
                                       const EvalConfig& cfg) {
  cfg.validate();
  const int max_h = *std::max_element(cfg.horizons.begin(), cfg.horizons.end());
  std::vector<Sample> samples;
  for (const VideoDetections* v : dataset.videos_in(split)) {
    auto part = extract_samples(*v, seq_len, max_h, cfg.stride);
    samples.insert(samples.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (samples.empty()) throw EvalError("split '" + split + "' yields no evaluation samples");
  return samples;
}

namespace {

std::vector<Variant> pair_variants(const std::map<int, VariantPair>& checkpoints) {
  Variant anat{kAnatomyRow, {}}, inst{kInstrumentRow, {}};
  for (const auto& [h, pair] : checkpoints) {
    anat.by_horizon[h] = &pair.with_anatomy;
    inst.by_horizon[h] = &pair.instrument_only;
  }
  return {anat, inst};
}

}  // namespace

AblationResult ablate(const std::vector<Sample>& samples, const std::map<int, VariantPair>& checkpoints,
                      const EvalConfig& cfg, bool keep_predictions) {
  return evaluate_variants(samples, pair_variants(checkpoints), cfg, keep_predictions);
}

AblationResult ablate(const Dataset& dataset, const std::string& split,
                      const std::map<int, VariantPair>& checkpoints, const EvalConfig& cfg,
                      bool keep_predictions) {
  cfg.validate();
  const auto first = checkpoints.find(cfg.horizons.front());
  if (first == checkpoints.end()) {
    throw ConfigError("no checkpoints given for horizon " + std::to_string(cfg.horizons.front()));
  }
  const int seq_len = first->second.with_anatomy.params.config.seq_len;
  return ablate(evaluation_samples(dataset, split, seq_len, cfg), checkpoints, cfg, keep_predictions);
}

namespace {

std::string threshold_label(double thr) {
  std::ostringstream os;
  os << '>' << thr;
  return os.str();
}

}  // namespace

std::string table_csv(const AccuracyTable& table) {
  std::ostringstream os;
  os << "variant,horizon,threshold,accuracy,count,matches,zero_predictions,dropped_targets\n";
  for (const auto& r : table.rows) {
    for (const auto& c : r.cells) {
      os << '"' << r.name << "\"," << c.horizon << ',' << c.threshold << ',' << std::fixed
         << std::setprecision(4) << c.score.accuracy << std::defaultfloat << ',' << c.score.total << ','
         << c.score.matches << ',' << c.score.zero_predictions << ',' << c.score.dropped_targets << '\n';
    }
  }
  return os.str();
}

std::string table_text(const AccuracyTable& table) {
  constexpr int kName = 22;
  constexpr int kCol = 9;
  std::ostringstream os;
  os << std::left << std::setw(kName) << "";
  for (int h : table.horizons) {
    std::ostringstream head;
    head << "f=" << h;
    os << std::left << std::setw(kCol * static_cast<int>(table.thresholds.size())) << head.str();
  }
  os << '\n' << std::left << std::setw(kName) << "Model";
  for (std::size_t h = 0; h < table.horizons.size(); ++h) {
    for (double thr : table.thresholds) os << std::left << std::setw(kCol) << threshold_label(thr);
  }
  os << '\n';
  for (const auto& r : table.rows) {
    os << std::left << std::setw(kName) << r.name;
    for (int h : table.horizons) {
      for (double thr : table.thresholds) {
        std::ostringstream cell;
        const DirectionScore& sc = r.cell(h, thr).score;
        if (sc.total == 0) {
          cell << '-';
        } else {
          cell << std::fixed << std::setprecision(2) << sc.accuracy;
        }
        os << std::left << std::setw(kCol) << cell.str();
      }
    }
    os << '\n';
  }
  os << std::left << std::setw(kName) << "samples";
  for (int h : table.horizons) {
    for (double thr : table.thresholds) {
      os << std::left << std::setw(kCol) << table.rows.front().cell(h, thr).score.total;
    }
  }
  os << '\n';
  return os.str();
}

std::string predictions_csv(const std::vector<SamplePrediction>& predictions) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "variant,horizon,video_id,t,gt_magnitude8,gt_dx,gt_dy,pred_dx,pred_dy,gt_label,pred_label\n";
  for (const auto& p : predictions) {
    const auto label = [](Vec2 v) -> std::string {
      return v.x == 0.0 && v.y == 0.0 ? "none" : std::string(to_string(direction_of(v)));
    };
    os << '"' << p.variant << "\"," << p.horizon << ',' << p.video_id << ',' << p.t << ','
       << p.gt_magnitude8 << ',' << p.target.x << ',' << p.target.y << ',' << p.predicted.x << ','
       << p.predicted.y << ',' << label(p.target) << ',' << label(p.predicted) << '\n';
  }
  return os.str();
}

}  // namespace trajcast
