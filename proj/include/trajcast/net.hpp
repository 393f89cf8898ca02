#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "trajcast/types.hpp"

namespace trajcast {

/// How the s encoder output tokens become the first fully connected layer's input.
enum class Aggregation { flatten, mean_pool };

std::string_view to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view text);

struct NetConfig {
  int seq_len = 64;
  int n_classes = kNumClasses;
  int n_layers = 6;
  int n_heads = 5;
  int ff_dim = 320;
  std::array<int, 3> fc_dims{512, 256, 128};
  int latent_dim = 16;
  int horizon = 8;
  double dropout = 0.1;
  Aggregation aggregation = Aggregation::flatten;

  int token_dim() const noexcept { return n_classes * kRowWidth; }
  int head_dim() const noexcept { return token_dim() / n_heads; }
  int output_dim() const noexcept { return horizon * 4; }
  int fc_input_dim() const noexcept {
    return aggregation == Aggregation::flatten ? seq_len * token_dim() : token_dim();
  }

  /// Throws ConfigError naming the offending field.
  void validate() const;
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

nlohmann::json to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const nlohmann::json& j);

/// y = x W^T + b. Weight is (out x in), bias is (1 x out).
struct Linear {
  Matrix weight;
  Matrix bias;
};

struct LayerNorm {
  Matrix gamma;
  Matrix beta;
};

struct EncoderLayer {
  Linear query, key, value, output;
  LayerNorm norm1;
  Linear ff1, ff2;
  LayerNorm norm2;
};

/// Every learnable tensor of the forecaster. Also used as the gradient container.
struct ForecasterParams {
  NetConfig config;
  std::vector<EncoderLayer> layers;
  std::array<Linear, 3> fc;
  Linear latent;
  Linear decoder;

  /// Visits (name, tensor) in a fixed order shared by checkpoints and the optimizer.
  void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;

  std::size_t parameter_count() const;
  bool all_finite() const;
  /// Same shapes, all zeros.
  ForecasterParams zeros_like() const;
};

/// Linear layers uniform in +-1/sqrt(fan_in); layer norms scale 1, offset 0.
ForecasterParams init_params(const NetConfig& cfg, std::uint64_t seed);

/// PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(p / 10000^(2i/d)).
Matrix positional_encoding(int length, int dim);

struct Prediction {
  DeltaTrajectory deltas;
  /// The 16-dim latent fed to the decoder.
  Eigen::VectorXd latent;
};

/// Inference-mode forward pass (dropout off).
Prediction forward(const ForecasterParams& params, const DetectionWindow& window);
/// As forward; with use_anatomy false the anatomy rows are zeroed first.
Prediction forward_masked(const ForecasterParams& params, const DetectionWindow& window,
                          bool use_anatomy);

/// Dropout configuration for one forward pass. Inactive unless `rng` is set.
struct DropoutContext {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const noexcept { return rng != nullptr && rate > 0.0; }
};

/// Stacks windows into (B*s) x 80 tokens, zeroing anatomy rows when !use_anatomy.
/// Throws ShapeError / InputError on bad windows.
Matrix stack_tokens(const std::vector<const DetectionWindow*>& windows, int seq_len,
                    bool use_anatomy);

/// Intermediate values of one batched forward pass, kept for backward.
struct ForwardCache;

struct BatchOutput {
  /// B x (f*4), row b holds sample b's deltas in row-major (frame, component) order.
  Matrix outputs;
  /// B x latent_dim.
  Matrix latents;
  std::shared_ptr<ForwardCache> cache;
};

/// tokens: (B*s) x 80. Keeps the cache only when `keep_cache`.
BatchOutput forward_batch(const ForecasterParams& params, const Matrix& tokens,
                          const DropoutContext& dropout = {}, bool keep_cache = false);

/// Gradients of sum_b <upstream_b, outputs_b> with respect to every parameter.
ForecasterParams backward_batch(const ForecasterParams& params, const BatchOutput& forward,
                                const Matrix& upstream);

/// Single-window gradient given the upstream gradient on the f x 4 prediction.
ForecasterParams backward(const ForecasterParams& params, const DetectionWindow& window,
                          const Matrix& upstream, bool use_anatomy = true);

DeltaTrajectory output_row_to_deltas(const Matrix& outputs, int row, int horizon);

}  // namespace trajcast
