#include "trajcast/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace trajcast {

void LossConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("loss config field 'lambda' must be >= 0");
  }
  if (!(epsilon_dir > 0.0)) throw ConfigError("loss config field 'epsilon_dir' must be > 0");
}

LossValue loss(const DeltaTrajectory& pred, const DeltaTrajectory& target, const LossConfig& cfg) {
  const Matrix& p = pred.deltas();
  const Matrix& t = target.deltas();
  if (p.rows() != t.rows() || p.cols() != t.cols()) {
    throw ShapeError("prediction is " + std::to_string(p.rows()) + "x" + std::to_string(p.cols()) +
                     " but target is " + std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
  }
  const int f = static_cast<int>(p.rows());
  LossValue out;
  out.grad.resize(f, 4);
  for (int r = 0; r < f; ++r) {
    for (int c = 0; c < 4; ++c) {
      const double diff = p(r, c) - t(r, c);
      out.l1 += std::abs(diff);
      out.grad(r, c) = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    }
  }

  const Eigen::Vector2d vp = p.leftCols(2).colwise().mean().transpose();
  const Eigen::Vector2d vg = t.leftCols(2).colwise().mean().transpose();
  const double np = vp.norm();
  const double ng = vg.norm();
  if (np >= cfg.epsilon_dir && ng >= cfg.epsilon_dir && f > 0) {
    const Eigen::Vector2d up = vp / np;
    const Eigen::Vector2d ug = vg / ng;
    // 1 - cos written as half the squared distance of the unit vectors: exactly 0 for
    // identical inputs, where 1 - dot/(np*ng) can land an ulp away.
    out.direction = cfg.lambda * std::min(2.0, 0.5 * (up - ug).squaredNorm());
    const Eigen::Vector2d dcos = (ug - up.dot(ug) * up) / np;
    const Eigen::Vector2d g = -cfg.lambda * dcos / static_cast<double>(f);
    for (int r = 0; r < f; ++r) {
      out.grad(r, 0) += g(0);
      out.grad(r, 1) += g(1);
    }
  }
  out.total = out.l1 + out.direction;
  return out;
}

void OptimConfig::validate() const {
  auto positive = [](double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string("optimizer config field '") + field + "' must be positive");
    }
  };
  positive(peak_lr, "peak_lr");
  positive(warmup_epochs, "warmup_epochs");
  positive(total_epochs, "total_epochs");
  positive(batch_size, "batch_size");
  positive(adam_epsilon, "adam_epsilon");
  if (warmup_epochs > total_epochs) {
    throw ConfigError("optimizer config field 'warmup_epochs' must not exceed total_epochs");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optimizer config field 'beta1' must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer config field 'beta2' must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer config field 'weight_decay' must be >= 0");
}

int OptimConfig::default_epochs(int horizon) { return horizon <= 8 ? 75 : 150; }

double lr_at(int epoch, const OptimConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.total_epochs) {
    throw RangeError("epoch " + std::to_string(epoch) + " outside [0, " +
                     std::to_string(cfg.total_epochs) + ")");
  }
  if (epoch < cfg.warmup_epochs) {
    return cfg.peak_lr * static_cast<double>(epoch + 1) / static_cast<double>(cfg.warmup_epochs);
  }
  return cfg.peak_lr;
}

AdamState AdamState::zeros_like(const ForecasterParams& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adamw_update(std::span<double> params, std::span<const double> grads,
                  std::span<double> first_moment, std::span<double> second_moment,
                  std::int64_t step, double lr, const OptimConfig& cfg) {
  if (grads.size() != params.size() || first_moment.size() != params.size() ||
      second_moment.size() != params.size()) {
    throw ShapeError("optimizer buffers differ in size");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericsError("non-finite gradient; optimizer step aborted");
  }
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    first_moment[i] = cfg.beta1 * first_moment[i] + (1.0 - cfg.beta1) * g;
    second_moment[i] = cfg.beta2 * second_moment[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = first_moment[i] / bias1;
    const double v_hat = second_moment[i] / bias2;
    params[i] = params[i] * decay - lr * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
  }
}

void step(ForecasterParams& params, const ForecasterParams& grads, AdamState& state, double lr,
          const OptimConfig& cfg) {
  if (!grads.all_finite()) throw NumericsError("non-finite gradient; optimizer step aborted");
  std::vector<Matrix*> p, m, v;
  std::vector<const Matrix*> g;
  params.for_each([&](const std::string&, Matrix& x) { p.push_back(&x); });
  state.first_moment.for_each([&](const std::string&, Matrix& x) { m.push_back(&x); });
  state.second_moment.for_each([&](const std::string&, Matrix& x) { v.push_back(&x); });
  grads.for_each([&](const std::string&, const Matrix& x) { g.push_back(&x); });
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw ShapeError("gradient layout does not match the parameters");
  }
  ++state.step;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i]->size() != p[i]->size()) throw ShapeError("gradient tensor shape mismatch");
    const auto n = static_cast<std::size_t>(p[i]->size());
    adamw_update({p[i]->data(), n}, {g[i]->data(), n}, {m[i]->data(), n}, {v[i]->data(), n},
                 state.step, lr, cfg);
  }
}

std::string report_csv(const TrainReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epoch,lr,train_loss,val_loss\n";
  for (const auto& e : report.epochs) {
    os << e.epoch << ',' << e.lr << ',' << e.train_loss << ',';
    if (std::isnan(e.val_loss)) {
      os << "nan";
    } else {
      os << e.val_loss;
    }
    os << '\n';
  }
  return os.str();
}

std::string report_log(const TrainReport& report) {
  std::ostringstream os;
  for (const auto& e : report.epochs) {
    os << "epoch " << std::setw(4) << e.epoch + 1 << "  lr " << std::scientific << std::setprecision(3)
       << e.lr << "  train " << std::fixed << std::setprecision(5) << e.train_loss << "  val ";
    if (std::isnan(e.val_loss)) {
      os << "-";
    } else {
      os << e.val_loss;
    }
    os << "  " << std::setprecision(1) << e.wall_seconds << "s\n";
  }
  return os.str();
}

namespace {

std::vector<const DetectionWindow*> batch_windows(const std::vector<Sample>& samples,
                                                  std::span<const std::size_t> idx) {
  std::vector<const DetectionWindow*> w;
  w.reserve(idx.size());
  for (std::size_t i : idx) w.push_back(&samples[i].window);
  return w;
}

}  // namespace

double evaluate_loss(const ForecasterParams& params, const std::vector<Sample>& samples,
                     const LossConfig& loss_cfg, bool use_anatomy, int batch_size) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  const int f = params.config.horizon;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, order.size() - start);
    const std::span<const std::size_t> idx(order.data() + start, n);
    const Matrix tokens = stack_tokens(batch_windows(samples, idx), params.config.seq_len, use_anatomy);
    const BatchOutput out = forward_batch(params, tokens);
    for (std::size_t b = 0; b < n; ++b) {
      total += loss(output_row_to_deltas(out.outputs, static_cast<int>(b), f),
                    samples[idx[b]].target, loss_cfg)
                   .total;
    }
  }
  return total / static_cast<double>(samples.size());
}

namespace {

// Adam moments of parameters that never receive gradient (e.g. embedding rows of classes
// absent from the data) decay by beta1 per step and reach the subnormal range after a few
// thousand steps, where every multiply on them gets ~100x slower. Flush them to zero.
class FlushSubnormals {
 public:
  FlushSubnormals() {
#if defined(__SSE__)
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | 0x8040);  // FTZ | DAZ
#endif
  }
  ~FlushSubnormals() {
#if defined(__SSE__)
    _mm_setcsr(saved_);
#endif
  }
  FlushSubnormals(const FlushSubnormals&) = delete;
  FlushSubnormals& operator=(const FlushSubnormals&) = delete;

 private:
  unsigned saved_ = 0;
};

}  // namespace

TrainResult train(const std::vector<Sample>& dataset, const NetConfig& net_cfg,
                  const LossConfig& loss_cfg, const OptimConfig& optim_cfg,
                  const TrainOptions& options) {
  const FlushSubnormals flush;
  net_cfg.validate();
  loss_cfg.validate();
  optim_cfg.validate();
  if (dataset.empty()) throw ConfigError("training needs a non-empty dataset");
  const int f = net_cfg.horizon;
  for (const auto& s : dataset) {
    if (s.target.horizon() != f) {
      throw ShapeError("sample horizon " + std::to_string(s.target.horizon()) +
                       " does not match the network horizon " + std::to_string(f));
    }
  }

  TrainResult result{init_params(net_cfg, optim_cfg.seed), {}};
  ForecasterParams& params = result.params;
  AdamState state = AdamState::zeros_like(params);
  std::mt19937_64 shuffle_rng(optim_cfg.seed ^ 0x5eed5eed5eed5eedULL);
  std::mt19937_64 dropout_rng(optim_cfg.seed ^ 0xd20d20d20d20d20dULL);
  const DropoutContext dropout{net_cfg.dropout, &dropout_rng};

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(optim_cfg.batch_size);

  for (int epoch = 0; epoch < optim_cfg.total_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, optim_cfg);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t n = std::min(batch, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, n);
      const Matrix tokens =
          stack_tokens(batch_windows(dataset, idx), net_cfg.seq_len, options.use_anatomy);
      const BatchOutput out = forward_batch(params, tokens, dropout, true);

      Matrix upstream(static_cast<Eigen::Index>(n), f * 4);
      for (std::size_t b = 0; b < n; ++b) {
        const auto bi = static_cast<int>(b);
        const LossValue lv = loss(output_row_to_deltas(out.outputs, bi, f), dataset[idx[b]].target, loss_cfg);
        if (!std::isfinite(lv.total)) throw NumericsError("training loss became non-finite");
        epoch_loss += lv.total;
        upstream.row(bi) = Eigen::Map<const Eigen::RowVectorXd>(lv.grad.data(), f * 4) /
                           static_cast<double>(n);
      }
      const ForecasterParams grads = backward_batch(params, out, upstream);
      step(params, grads, state, lr, optim_cfg);
      if (!params.all_finite()) throw NumericsError("parameters became non-finite");
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.train_loss = epoch_loss / static_cast<double>(dataset.size());
    stats.val_loss = options.validation
                         ? evaluate_loss(params, *options.validation, loss_cfg, options.use_anatomy)
                         : std::numeric_limits<double>::quiet_NaN();
    stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.report.epochs.push_back(stats);

    if (!options.checkpoint_path.empty()) {
      save_checkpoint(options.checkpoint_path,
                      {params, {epoch + 1, optim_cfg.seed, loss_cfg.lambda, f, options.use_anatomy}});
    }
    if (options.on_epoch) options.on_epoch(stats);
  }
  return result;
}

}  // namespace trajcast
