#include <cmath>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "trajcast/errors.hpp"
#include "trajcast/eval.hpp"
#include "trajcast/synth.hpp"

using namespace trajcast;

namespace {

DeltaTrajectory single_step(double dx, double dy, int f = 1) {
  Matrix m = Matrix::Zero(f, 4);
  m(0, 0) = dx;
  m(0, 1) = dy;
  return DeltaTrajectory(m);
}

std::vector<DeltaTrajectory> random_targets(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<DeltaTrajectory> out;
  for (int i = 0; i < n; ++i) out.push_back(single_step(g(rng), g(rng)));
  return out;
}

}  // namespace

TEST_CASE("identical and antipodal predictions") {
  const auto t = random_targets(500, 1);
  CHECK(direction_accuracy(t, t) == 100.0);
  std::vector<DeltaTrajectory> flipped;
  for (const auto& x : t) {
    Matrix m = x.deltas();
    m.leftCols(2) *= -1.0;
    flipped.emplace_back(m);
  }
  CHECK(direction_accuracy(flipped, t) == 0.0);
}

TEST_CASE("three hand-built samples") {
  // targets: right, up, left; predictions: right, up, down
  const std::vector<DeltaTrajectory> t{single_step(1, 0.2), single_step(0.1, -1), single_step(-2, 0.5)};
  const std::vector<DeltaTrajectory> p{single_step(3, -1), single_step(-0.3, -0.9), single_step(0.2, 1)};
  int oracle = 0;
  for (int i = 0; i < 3; ++i) oracle += direction_of(p[i].summed_center()) == direction_of(t[i].summed_center());
  CHECK(oracle == 2);
  CHECK(direction_accuracy(p, t) == doctest::Approx(200.0 / 3.0));
}

TEST_CASE("zero predictions are misses and zero targets are dropped") {
  const std::vector<DeltaTrajectory> t{single_step(1, 0), single_step(0, 0), single_step(0, 1)};
  const std::vector<DeltaTrajectory> p{single_step(0, 0), single_step(1, 0), single_step(0, 2)};
  const DirectionScore s = direction_score(p, t);
  CHECK(s.total == 2);
  CHECK(s.dropped_targets == 1);
  CHECK(s.zero_predictions == 1);
  CHECK(s.matches == 1);
  CHECK(s.accuracy == 50.0);
  CHECK_THROWS_AS(direction_accuracy({}, {}), EvalError);
  CHECK_THROWS_AS(direction_accuracy({single_step(0, 0)}, {single_step(0, 0)}), EvalError);
  CHECK_THROWS_AS(direction_accuracy({single_step(1, 0, 2)}, {single_step(1, 0, 3)}), ShapeError);
}

TEST_CASE("accuracy ignores positive rescaling of predictions") {
  const auto t = random_targets(2000, 2);
  const auto p = random_targets(2000, 3);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> s(0.01, 100.0);
  std::vector<DeltaTrajectory> scaled;
  for (const auto& x : p) scaled.emplace_back(x.deltas() * s(rng));
  CHECK(direction_accuracy(scaled, t) == direction_accuracy(p, t));
}

TEST_CASE("random baseline") {
  const auto t = random_targets(100000, 5);
  const double r = random_baseline(t, 11);
  CHECK(r > 24.3);
  CHECK(r < 25.7);
  const auto four = random_targets(4, 6);
  CHECK(random_baseline(four, 3) == random_baseline(four, 3));
  CHECK_THROWS_AS(random_baseline({}, 0), EvalError);
  // Uniform guesses against a constant label still land near 25.
  std::vector<DeltaTrajectory> all_right(40000, single_step(1, 0));
  CHECK(random_baseline(all_right, 1) == doctest::Approx(25.0).epsilon(0.05));
}

TEST_CASE("eval config validation") {
  EvalConfig c;
  CHECK_NOTHROW(c.validate());
  c.thresholds = {0.05, 0.1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.thresholds = {0.1, -0.1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.horizons = {8, 8};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

namespace {

Checkpoint make_ckpt(int horizon, bool anatomy, std::uint64_t seed, int s = 8) {
  return {init_params(trajcast::testing::small_net(s, horizon), seed), {1, seed, 0.5, horizon, anatomy}};
}

std::vector<Sample> eval_samples() {
  SceneConfig cfg;
  cfg.n_videos = 2;
  cfg.frames_per_video = 400;
  cfg.instrument_speed = 0.03;
  std::vector<Sample> out;
  for (const auto& v : generate_dataset(cfg).videos) {
    auto part = extract_samples(v, 8, 16, 3);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace

TEST_CASE("ablation table layout and shared filters") {
  const auto samples = eval_samples();
  std::map<int, VariantPair> ck;
  ck[8] = {make_ckpt(8, true, 1), make_ckpt(8, false, 2)};
  ck[16] = {make_ckpt(16, true, 3), make_ckpt(16, false, 4)};
  const EvalConfig cfg;
  const AblationResult res = ablate(samples, ck, cfg, true);
  const AccuracyTable& table = res.table;
  REQUIRE(table.rows.size() == 3);
  CHECK(table.rows[0].name == "Anatomy + Instrument");
  CHECK(table.rows[1].name == "Instrument");
  CHECK(table.rows[2].name == "Random");
  for (const auto& row : table.rows) CHECK(row.cells.size() == 6);
  for (int h : {8, 16}) {
    std::int64_t prev = 0;
    for (double thr : cfg.thresholds) {
      const auto n = table.row(kAnatomyRow).cell(h, thr).score.total;
      CHECK(table.row(kInstrumentRow).cell(h, thr).score.total == n);
      CHECK(table.row(kRandomRow).cell(h, thr).score.total == n);
      CHECK(n >= prev);
      prev = n;
      for (const auto& row : table.rows) {
        const double a = row.cell(h, thr).score.accuracy;
        CHECK(a >= 0.0);
        CHECK(a <= 100.0);
      }
    }
  }
  CHECK(res.predictions.size() == 2 * 2 * samples.size());
  CHECK(table_text(table).find("Anatomy + Instrument") != std::string::npos);
  CHECK(table_csv(table).find("\"Random\",16,0.05,") != std::string::npos);
  CHECK(predictions_csv(res.predictions).find("gt_label") != std::string::npos);
}

TEST_CASE("identical checkpoints give identical rows") {
  const auto samples = eval_samples();
  std::map<int, VariantPair> ck;
  const Checkpoint c = make_ckpt(8, true, 5);
  ck[8] = {c, c};
  EvalConfig cfg;
  cfg.horizons = {8};
  const auto table = ablate(samples, ck, cfg).table;
  for (double thr : cfg.thresholds) {
    CHECK(table.row(kAnatomyRow).cell(8, thr).score.accuracy == table.row(kInstrumentRow).cell(8, thr).score.accuracy);
  }
}

TEST_CASE("ablation rejects mismatched checkpoints") {
  const auto samples = eval_samples();
  EvalConfig cfg;
  cfg.horizons = {8};
  std::map<int, VariantPair> ck;
  ck[8] = {make_ckpt(16, true, 1), make_ckpt(8, false, 2)};
  CHECK_THROWS_AS(ablate(samples, ck, cfg), ConfigError);
  ck[8] = {make_ckpt(8, true, 1), make_ckpt(8, false, 2, 10)};
  CHECK_THROWS_AS(ablate(samples, ck, cfg), ConfigError);
  ck.clear();
  ck[16] = {make_ckpt(16, true, 1), make_ckpt(16, false, 2)};
  CHECK_THROWS_AS(ablate(samples, ck, cfg), ConfigError);
}
