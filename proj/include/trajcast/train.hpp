#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "trajcast/checkpoint.hpp"
#include "trajcast/dataio.hpp"
#include "trajcast/net.hpp"

namespace trajcast {

struct LossConfig {
  double lambda = 0.5;
  /// Below this norm an average direction vector counts as undefined.
  double epsilon_dir = 1e-8;

  void validate() const;
};

struct LossValue {
  double total = 0.0;
  double l1 = 0.0;
  double direction = 0.0;
  /// d total / d pred, same f x 4 shape as the prediction.
  Matrix grad;
};

/// sum |target - pred|_1 + lambda * (1 - cos(mean pred center step, mean target center step)).
/// The direction term and its gradient vanish when either mean has norm below epsilon_dir.
LossValue loss(const DeltaTrajectory& pred, const DeltaTrajectory& target, const LossConfig& cfg);

struct OptimConfig {
  double peak_lr = 1e-4;
  int warmup_epochs = 60;
  int total_epochs = 75;
  int batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
  /// 75 epochs for an 8-frame horizon, 150 for 16 (and longer).
  static int default_epochs(int horizon);
};

/// Linear warm-up to peak_lr, reaching it at epoch warmup_epochs - 1; constant afterwards.
double lr_at(int epoch, const OptimConfig& cfg);

struct AdamState {
  ForecasterParams first_moment;
  ForecasterParams second_moment;
  std::int64_t step = 0;

  static AdamState zeros_like(const ForecasterParams& params);
};

/// Decoupled weight decay Adam on flat buffers. `step` is the 1-based step number.
/// Throws NumericsError before touching anything if a gradient is not finite.
void adamw_update(std::span<double> params, std::span<const double> grads,
                  std::span<double> first_moment, std::span<double> second_moment,
                  std::int64_t step, double lr, const OptimConfig& cfg);

/// One AdamW step over every tensor; increments state.step.
void step(ForecasterParams& params, const ForecasterParams& grads, AdamState& state, double lr,
          const OptimConfig& cfg);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  /// NaN when no validation set was given.
  double val_loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
};

/// One row per epoch: epoch, lr, train_loss, val_loss. Wall time is left out so that
/// reruns produce identical files.
std::string report_csv(const TrainReport& report);
std::string report_log(const TrainReport& report);

struct TrainOptions {
  bool use_anatomy = true;
  /// Rewritten after every epoch when non-empty.
  std::filesystem::path checkpoint_path;
  const std::vector<Sample>* validation = nullptr;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  ForecasterParams params;
  TrainReport report;
};

/// Mean loss over `samples` in inference mode.
double evaluate_loss(const ForecasterParams& params, const std::vector<Sample>& samples,
                     const LossConfig& loss_cfg, bool use_anatomy, int batch_size = 64);

TrainResult train(const std::vector<Sample>& dataset, const NetConfig& net_cfg,
                  const LossConfig& loss_cfg, const OptimConfig& optim_cfg,
                  const TrainOptions& options = {});

}  // namespace trajcast
