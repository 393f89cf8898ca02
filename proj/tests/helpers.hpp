#pragma once

#include <random>
#include <vector>

#include "trajcast/dataio.hpp"
#include "trajcast/net.hpp"

namespace trajcast::testing {

// Random frames: each class present with probability `presence`, boxes inside the unit square.
inline std::vector<FrameDetections> random_frames(int n, std::uint64_t seed, double presence = 0.7) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<FrameDetections> frames(static_cast<std::size_t>(n));
  for (auto& fr : frames) {
    for (int c = 0; c < kNumClasses; ++c) {
      if (u(rng) >= presence) continue;
      const double w = 0.05 + 0.2 * u(rng);
      const double h = 0.05 + 0.2 * u(rng);
      fr.set(ClassId(c), {w / 2 + (1 - w) * u(rng), h / 2 + (1 - h) * u(rng), w, h});
    }
  }
  return frames;
}

inline DetectionWindow random_window(int s, std::uint64_t seed) {
  return DetectionWindow::from_frames(random_frames(s, seed), "rand", s - 1);
}

inline NetConfig small_net(int s = 8, int f = 4) {
  NetConfig cfg;
  cfg.seq_len = s;
  cfg.n_layers = 2;
  cfg.n_heads = 5;
  cfg.ff_dim = 40;
  cfg.fc_dims = {32, 24, 16};
  cfg.latent_dim = 16;
  cfg.horizon = f;
  return cfg;
}

// Video where only the instrument moves, on a straight line with per-frame step (dx, dy).
inline VideoDetections straight_video(int length, double dx, double dy, const std::string& id = "line") {
  std::vector<FrameDetections> frames(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) {
    frames[i].set(ClassId(0), {0.5, 0.5, 0.1, 0.1});
    frames[i].set(ClassId::instrument(), {0.3 + dx * i, 0.4 + dy * i, 0.1, 0.1});
  }
  return VideoDetections(id, 0, std::move(frames));
}

}  // namespace trajcast::testing
