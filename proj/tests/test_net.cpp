#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "trajcast/errors.hpp"
#include "trajcast/net.hpp"
#include "trajcast/train.hpp"

using namespace trajcast;
using trajcast::testing::random_window;
using trajcast::testing::small_net;

namespace {

struct ParamRef {
  Matrix* tensor;
  Eigen::Index index;
  std::string name;
};

std::vector<ParamRef> all_scalars(ForecasterParams& p) {
  std::vector<ParamRef> out;
  p.for_each([&](const std::string& name, Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back({&m, i, name});
  });
  return out;
}

// Batch-mean training loss with optional fixed dropout masks (the rng is reseeded each call).
struct LossProbe {
  std::vector<DetectionWindow> windows;
  std::vector<DeltaTrajectory> targets;
  LossConfig loss_cfg;
  bool with_dropout = false;
  std::uint64_t mask_seed = 99;

  double value(const ForecasterParams& p) const {
    std::mt19937_64 rng(mask_seed);
    const DropoutContext drop{with_dropout ? 0.1 : 0.0, with_dropout ? &rng : nullptr};
    const BatchOutput out = forward_batch(p, tokens(p), drop);
    double total = 0.0;
    for (std::size_t b = 0; b < windows.size(); ++b) {
      total += loss(output_row_to_deltas(out.outputs, static_cast<int>(b), p.config.horizon), targets[b], loss_cfg)
                   .total;
    }
    return total / static_cast<double>(windows.size());
  }

  ForecasterParams gradient(const ForecasterParams& p) const {
    std::mt19937_64 rng(mask_seed);
    const DropoutContext drop{with_dropout ? 0.1 : 0.0, with_dropout ? &rng : nullptr};
    const BatchOutput out = forward_batch(p, tokens(p), drop, true);
    const int f = p.config.horizon;
    Matrix upstream(static_cast<Eigen::Index>(windows.size()), f * 4);
    for (std::size_t b = 0; b < windows.size(); ++b) {
      const LossValue lv = loss(output_row_to_deltas(out.outputs, static_cast<int>(b), f), targets[b], loss_cfg);
      upstream.row(static_cast<Eigen::Index>(b)) =
          Eigen::Map<const Eigen::RowVectorXd>(lv.grad.data(), f * 4) / static_cast<double>(windows.size());
    }
    return backward_batch(p, out, upstream);
  }

  Matrix tokens(const ForecasterParams& p) const {
    std::vector<const DetectionWindow*> w;
    for (const auto& x : windows) w.push_back(&x);
    return stack_tokens(w, p.config.seq_len, true);
  }
};

// Targets kept well away from the initial predictions so no L1 term changes sign under the probe step.
LossProbe make_probe(const ForecasterParams& p, int batch, std::uint64_t seed, bool dropout) {
  LossProbe probe;
  probe.with_dropout = dropout;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.3, 1.0);
  std::bernoulli_distribution coin(0.5);
  for (int b = 0; b < batch; ++b) probe.windows.push_back(random_window(p.config.seq_len, seed * 31 + b));
  const BatchOutput out = forward_batch(p, probe.tokens(p));
  for (int b = 0; b < batch; ++b) {
    Matrix t = output_row_to_deltas(out.outputs, b, p.config.horizon).deltas();
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += coin(rng) ? u(rng) : -u(rng);
    probe.targets.emplace_back(t);
  }
  return probe;
}

double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale < 1e-9 ? std::abs(a - b) : std::abs(a - b) / scale;
}

// Worst relative error over `count` sampled scalars, central differences with step h.
double gradient_check(ForecasterParams p, const LossProbe& probe, int count, std::uint64_t seed,
                      const std::string& only_prefix = {}) {
  const ForecasterParams grad = probe.gradient(p);
  ForecasterParams grad_copy = grad;
  auto refs = all_scalars(p);
  auto grefs = all_scalars(grad_copy);
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].name.rfind(only_prefix, 0) == 0) pool.push_back(i);
  }
  REQUIRE(!pool.empty());
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  constexpr double h = 1e-4;
  double worst = 0.0;
  for (int k = 0; k < count; ++k) {
    const std::size_t i = pool[pick(rng)];
    double& x = refs[i].tensor->data()[refs[i].index];
    const double saved = x;
    x = saved + h;
    const double up = probe.value(p);
    x = saved - h;
    const double down = probe.value(p);
    x = saved;
    const double numeric = (up - down) / (2 * h);
    const double analytic = grefs[i].tensor->data()[grefs[i].index];
    const double err = relative_error(analytic, numeric);
    if (err >= 1e-3) MESSAGE(refs[i].name << "[" << refs[i].index << "] analytic " << analytic << " numeric " << numeric);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_CASE("positional encoding matches the sinusoid definition") {
  const Matrix pe = positional_encoding(64, 80);
  CHECK(pe.rows() == 64);
  CHECK(pe.cols() == 80);
  CHECK(pe(0, 0) == 0.0);
  CHECK(pe(0, 1) == 1.0);
  CHECK(pe(1, 0) == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
  CHECK(pe(1, 1) == doctest::Approx(std::cos(1.0)).epsilon(1e-15));
  // column 2i uses frequency 10000^(-2i/80)
  CHECK(pe(5, 10) == doctest::Approx(std::sin(5.0 / std::pow(10000.0, 10.0 / 80.0))).epsilon(1e-14));
  CHECK(pe(63, 79) == doctest::Approx(std::cos(63.0 / std::pow(10000.0, 78.0 / 80.0))).epsilon(1e-14));
  CHECK_THROWS_AS(positional_encoding(4, 7), ConfigError);
}

TEST_CASE("parameter count follows the layer shapes") {
  const NetConfig cfg;  // full size
  const auto p = init_params(cfg, 1);
  const std::size_t d = 80, ff = 320;
  const std::size_t enc = 4 * (d * d + d) + 2 * 2 * d + (d * ff + ff) + (ff * d + d);
  const std::size_t head = (64 * d * 512 + 512) + (512 * 256 + 256) + (256 * 128 + 128) + (128 * 16 + 16) +
                           (16 * 32 + 32);
  CHECK(p.parameter_count() == 6 * enc + head);
}

TEST_CASE("init is uniform within 1/sqrt(fan_in) and norms start at identity") {
  const auto p = init_params(small_net(), 3);
  p.for_each([](const std::string& name, const Matrix& m) {
    if (name.find("gamma") != std::string::npos) {
      CHECK((m.array() == 1.0).all());
    } else if (name.find("beta") != std::string::npos) {
      CHECK((m.array() == 0.0).all());
    }
  });
  const double bound = 1.0 / std::sqrt(80.0);
  CHECK(p.layers[0].query.weight.cwiseAbs().maxCoeff() <= bound);
  CHECK(p.layers[0].query.bias.cwiseAbs().maxCoeff() <= bound);
  CHECK(init_params(small_net(), 3).decoder.weight == p.decoder.weight);
  CHECK(init_params(small_net(), 4).decoder.weight != p.decoder.weight);
}

TEST_CASE("forward shapes and input validation") {
  const auto p = init_params(small_net(8, 4), 2);
  const auto pred = forward(p, random_window(8, 5));
  CHECK(pred.deltas.horizon() == 4);
  CHECK(pred.latent.size() == 16);
  CHECK_THROWS_AS(forward(p, random_window(9, 5)), ShapeError);

  auto frames = trajcast::testing::random_frames(8, 1);
  Matrix tokens = DetectionWindow::from_frames(frames).to_tokens();
  tokens(0, 1) = 1.5;
  CHECK_THROWS_AS(forward_batch(p, tokens), InputError);
  tokens(0, 1) = std::nan("");
  CHECK_THROWS_AS(forward_batch(p, tokens), InputError);
}

TEST_CASE("batched and single forward agree") {
  const auto p = init_params(small_net(), 9);
  std::vector<DetectionWindow> ws{random_window(8, 1), random_window(8, 2), random_window(8, 3)};
  std::vector<const DetectionWindow*> ptr{&ws[0], &ws[1], &ws[2]};
  const BatchOutput out = forward_batch(p, stack_tokens(ptr, 8, true));
  for (int b = 0; b < 3; ++b) {
    const Matrix single = forward(p, ws[b]).deltas.deltas();
    CHECK((output_row_to_deltas(out.outputs, b, 4).deltas() - single).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("instrument-only forward ignores anatomy rows") {
  const auto p = init_params(small_net(), 4);
  auto a = trajcast::testing::random_frames(8, 10);
  auto b = trajcast::testing::random_frames(8, 11);
  // Same instrument track, different anatomy.
  for (int i = 0; i < 8; ++i) {
    if (a[i].present(ClassId::instrument())) {
      b[i].set(ClassId::instrument(), a[i].box(ClassId::instrument()));
    } else {
      b[i].clear(ClassId::instrument());
    }
  }
  const auto wa = DetectionWindow::from_frames(a);
  const auto wb = DetectionWindow::from_frames(b);
  CHECK(forward_masked(p, wa, false).deltas.deltas() == forward_masked(p, wb, false).deltas.deltas());
  CHECK(forward_masked(p, wa, true).deltas.deltas() != forward_masked(p, wb, true).deltas.deltas());
  CHECK(forward_masked(p, wa, true).deltas.deltas() == forward(p, wa).deltas.deltas());
}

TEST_CASE("output depends on frame order") {
  // Positional encoding breaks permutation symmetry: reversing the frames changes the output.
  const auto p = init_params(small_net(), 6);
  auto frames = trajcast::testing::random_frames(8, 12);
  const auto fwd = forward(p, DetectionWindow::from_frames(frames)).deltas.deltas();
  std::reverse(frames.begin(), frames.end());
  const auto rev = forward(p, DetectionWindow::from_frames(frames)).deltas.deltas();
  CHECK((fwd - rev).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("dropout is off in inference and reproducible in training") {
  const auto p = init_params(small_net(), 7);
  std::vector<DetectionWindow> ws{random_window(8, 1)};
  std::vector<const DetectionWindow*> ptr{&ws[0]};
  const Matrix tokens = stack_tokens(ptr, 8, true);
  std::mt19937_64 r1(5), r2(5), r3(6);
  const Matrix a = forward_batch(p, tokens, {0.1, &r1}).outputs;
  const Matrix b = forward_batch(p, tokens, {0.1, &r2}).outputs;
  const Matrix c = forward_batch(p, tokens, {0.1, &r3}).outputs;
  CHECK(a == b);
  CHECK(a != c);
  CHECK(forward_batch(p, tokens).outputs == forward_batch(p, tokens).outputs);
}

TEST_CASE("analytic gradients match central differences on the reduced model") {
  for (Aggregation agg : {Aggregation::flatten, Aggregation::mean_pool}) {
    for (bool dropout : {false, true}) {
      CAPTURE(to_string(agg));
      CAPTURE(dropout);
      NetConfig cfg = small_net(8, 4);
      cfg.aggregation = agg;
      const auto p = init_params(cfg, 21);
      const LossProbe probe = make_probe(p, 3, 77, dropout);
      CHECK(gradient_check(p, probe, 100, 5) < 1e-3);
    }
  }
}

TEST_CASE("per-block gradient checks") {
  const auto p = init_params(small_net(8, 4), 22);
  const LossProbe probe = make_probe(p, 2, 78, true);
  for (const char* prefix : {"encoder.0.attn.query", "encoder.0.attn.key", "encoder.0.attn.value",
                             "encoder.0.attn.output", "encoder.0.norm1", "encoder.1.ff1", "encoder.1.ff2",
                             "encoder.1.norm2", "fc.", "latent.", "decoder."}) {
    CAPTURE(prefix);
    CHECK(gradient_check(p, probe, 12, 9, prefix) < 1e-3);
  }
}
