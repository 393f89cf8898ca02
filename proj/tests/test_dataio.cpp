#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "trajcast/dataio.hpp"
#include "trajcast/errors.hpp"
#include "trajcast/synth.hpp"

using namespace trajcast;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("trajcast_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Brute force: every offset whose window plus horizon fits, with the instrument present
// from the last window frame through the horizon.
std::vector<std::int64_t> enumerate_last_frames(const VideoDetections& v, int s, int f, int stride) {
  std::vector<std::int64_t> out;
  for (std::int64_t off = 0; off + s + f <= v.length(); off += stride) {
    const std::int64_t last = off + s - 1;
    bool ok = true;
    for (std::int64_t i = last; i <= last + f; ++i) ok = ok && v.frame(i).present(ClassId::instrument());
    if (ok) out.push_back(last);
  }
  return out;
}

std::int64_t enumerate_offsets(std::int64_t L, int s, int f, int stride) {
  std::int64_t n = 0;
  for (std::int64_t off = 0; off + s + f <= L; off += stride) ++n;
  return n;
}

}  // namespace

TEST_CASE("window count matches exhaustive enumeration") {
  for (int L = 0; L <= 40; ++L) {
    for (int s = 1; s <= 6; ++s) {
      for (int f = 1; f <= 5; ++f) {
        for (int stride = 1; stride <= 5; ++stride) {
          CAPTURE(L);
          CAPTURE(s);
          CAPTURE(f);
          CAPTURE(stride);
          REQUIRE(window_count(L, s, f, stride) == enumerate_offsets(L, s, f, stride));
        }
      }
    }
  }
}

TEST_CASE("extracted samples match brute-force enumeration on toy videos") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    auto frames = trajcast::testing::random_frames(30, seed, 0.85);
    const VideoDetections v("toy", 100, frames);
    for (int s : {1, 3, 5}) {
      for (int f : {1, 2, 4}) {
        for (int stride : {1, 2, 3}) {
          const auto samples = extract_samples(v, s, f, stride);
          const auto expect = enumerate_last_frames(v, s, f, stride);
          REQUIRE(samples.size() == expect.size());
          for (std::size_t i = 0; i < samples.size(); ++i) {
            CHECK(samples[i].window.t() == 100 + expect[i]);
            CHECK(samples[i].window.length() == s);
            CHECK(samples[i].target.horizon() == f);
            CHECK(&samples[i].window.frame(s - 1) == &v.frame(expect[i]));
          }
        }
      }
    }
  }
  CHECK_THROWS_AS(extract_samples(VideoDetections("x", 0, {}), 0, 1, 1), ConfigError);
}

TEST_CASE("targets reconstruct future instrument boxes exactly") {
  SceneConfig cfg;
  cfg.n_videos = 3;
  cfg.frames_per_video = 400;
  cfg.seed = 11;
  const Dataset ds = generate_dataset(cfg);
  std::int64_t checked = 0;
  for (const auto& video : ds.videos) {
    for (const auto& s : extract_samples(video, 64, 16, 3)) {
      BBox b = s.instrument_at_t;
      const std::int64_t last = s.window.t() - video.first_frame();
      for (int k = 0; k < 16; ++k) {
        b.cx += s.target(k, 0);
        b.cy += s.target(k, 1);
        b.w += s.target(k, 2);
        b.h += s.target(k, 3);
        const BBox& truth = video.frame(last + k + 1).box(ClassId::instrument());
        REQUIRE(b.cx == truth.cx);
        REQUIRE(b.cy == truth.cy);
        REQUIRE(b.w == truth.w);
        REQUIRE(b.h == truth.h);
        ++checked;
      }
    }
  }
  CHECK(checked > 1000);
}

TEST_CASE("8-frame displacement is shared across horizons") {
  const VideoDetections v = trajcast::testing::straight_video(60, 0.25 / 64, -0.125 / 64);
  const auto s8 = extract_samples(v, 10, 8, 5);
  const auto s16 = extract_samples(v, 10, 16, 5);
  REQUIRE(!s16.empty());
  for (std::size_t i = 0; i < s16.size(); ++i) {
    CHECK(s8[i].gt_displacement8.x == s16[i].gt_displacement8.x);
    CHECK(s8[i].gt_displacement8.y == s16[i].gt_displacement8.y);
  }
  CHECK(s8[0].gt_displacement8.x == 8 * 0.25 / 64);
  // Shorter horizons sum what they have.
  CHECK(extract_samples(v, 10, 4, 5)[0].gt_displacement8.x == 4 * 0.25 / 64);
}

TEST_CASE("magnitude filters are nested on generated data") {
  for (Coupling c : {Coupling::anatomy_coupled, Coupling::decoupled}) {
    SceneConfig cfg;
    cfg.n_videos = 4;
    cfg.frames_per_video = 600;
    cfg.coupling = c;
    cfg.seed = 5;
    const Dataset ds = generate_dataset(cfg);
    std::vector<Sample> all;
    for (const auto& v : ds.videos) {
      auto part = extract_samples(v, 64, 8, 1);
      all.insert(all.end(), part.begin(), part.end());
    }
    auto key = [](const Sample& s) { return std::make_pair(s.window.video_id(), s.window.t()); };
    std::set<std::pair<std::string, std::int64_t>> s0, s05, s1;
    for (const auto& s : filter_by_magnitude(all, 0.0)) s0.insert(key(s));
    for (const auto& s : filter_by_magnitude(all, 0.05)) s05.insert(key(s));
    for (const auto& s : filter_by_magnitude(all, 0.1)) s1.insert(key(s));
    CHECK(s0.size() == all.size());
    CHECK(std::includes(s0.begin(), s0.end(), s05.begin(), s05.end()));
    CHECK(std::includes(s05.begin(), s05.end(), s1.begin(), s1.end()));
    CHECK(s1.size() < s05.size());
    CHECK(!s1.empty());
  }
  CHECK_THROWS_AS(filter_by_magnitude({}, -0.1), ConfigError);
}

TEST_CASE("threshold 0.1 is 192 pixels across a 1920-pixel frame") {
  const double width = 1920.0;
  auto sample_moving = [&](double pixels) {
    Sample s;
    s.gt_displacement8 = {pixels / width, 0.0};
    return s;
  };
  CHECK_FALSE(passes_magnitude(sample_moving(192.0), 0.1));
  CHECK(passes_magnitude(sample_moving(192.5), 0.1));
  CHECK_FALSE(passes_magnitude(sample_moving(191.5), 0.1));
  CHECK(passes_magnitude(sample_moving(96.5), 0.05));
  CHECK_FALSE(passes_magnitude(sample_moving(96.0), 0.05));
  CHECK(passes_magnitude(sample_moving(0.0), 0.0));
}

TEST_CASE("frame lines round-trip") {
  FrameDetections fr;
  fr.set(ClassId(1), {0.1, 0.2, 0.3, 0.4});
  fr.set(ClassId::instrument(), {1.0 / 3.0, 0.7, 0.05, 0.05});
  const std::string line = frame_to_json_line(42, fr);
  const ParsedFrame back = parse_frame_line(line, "mem:1");
  CHECK(back.index == 42);
  CHECK(back.detections == fr);
  CHECK(back.warnings.empty());
  CHECK(frame_to_json_line(42, back.detections) == line);
}

TEST_CASE("malformed frame lines are rejected with their location") {
  const auto bad = [](const std::string& line) {
    try {
      parse_frame_line(line, "vid.jsonl:7");
    } catch (const ParseError& e) {
      return std::string(e.what()).find("vid.jsonl:7") != std::string::npos;
    }
    return false;
  };
  CHECK(bad("{not json"));
  CHECK(bad(R"({"detections": []})"));
  CHECK(bad(R"({"frame": 1, "detections": [{"class": 16, "cx": 0.5, "cy": 0.5, "w": 0.1, "h": 0.1}]})"));
  CHECK(bad(R"({"frame": 1, "detections": [{"class": 2, "cx": 1.5, "cy": 0.5, "w": 0.1, "h": 0.1}]})"));
  CHECK(bad(R"({"frame": 1, "detections": [{"class": 2, "cx": 0.5, "cy": 0.5, "w": 0.1}]})"));
}

TEST_CASE("duplicate detections in a line keep the largest and warn") {
  const auto parsed = parse_frame_line(
      R"({"frame": 3, "detections": [{"class": 4, "cx": 0.5, "cy": 0.5, "w": 0.1, "h": 0.1},)"
      R"({"class": 4, "cx": 0.2, "cy": 0.2, "w": 0.3, "h": 0.3}]})",
      "x:1");
  CHECK(parsed.detections.box(ClassId(4)).cx == 0.2);
  CHECK(parsed.warnings.size() == 1);
}

TEST_CASE("dataset directories round-trip") {
  SceneConfig cfg;
  cfg.n_videos = 5;
  cfg.frames_per_video = 120;
  cfg.seed = 3;
  const fs::path dir = scratch_dir("roundtrip");
  const Dataset written = generate_dataset(cfg, dir);
  const Dataset read = load_dataset(dir);
  CHECK(read.class_names == written.class_names);
  CHECK(read.split.forecaster_train == written.split.forecaster_train);
  CHECK(read.split.test == written.split.test);
  CHECK(read.producer == written.producer);
  REQUIRE(read.videos.size() == written.videos.size());
  for (std::size_t i = 0; i < read.videos.size(); ++i) {
    CHECK(read.videos[i].video_id() == written.videos[i].video_id());
    CHECK(read.videos[i].frames() == written.videos[i].frames());
  }
  fs::remove_all(dir);
}

TEST_CASE("manifest problems are schema errors") {
  const fs::path dir = scratch_dir("schema");
  CHECK_THROWS_AS(load_dataset(dir), SchemaError);

  SceneConfig cfg;
  cfg.n_videos = 2;
  cfg.frames_per_video = 100;
  generate_dataset(cfg, dir);
  std::ifstream in(dir / "manifest.json");
  nlohmann::json manifest = nlohmann::json::parse(in);
  in.close();

  auto rewrite = [&](const nlohmann::json& m) {
    std::ofstream(dir / "manifest.json") << m.dump();
  };
  auto m = manifest;
  m["splits"]["test"].push_back("video_999");
  rewrite(m);
  CHECK_THROWS_AS(load_dataset(dir), SchemaError);

  m = manifest;
  m["classes"].erase(0);
  rewrite(m);
  CHECK_THROWS_AS(load_dataset(dir), SchemaError);

  m = manifest;
  m["splits"]["validation"] = m["splits"]["forecaster_train"];
  rewrite(m);
  CHECK_THROWS_AS(load_dataset(dir), SchemaError);
  fs::remove_all(dir);
}

TEST_CASE("window lookups outside the video are range errors") {
  const VideoDetections v = trajcast::testing::straight_video(20, 0.01, 0.0);
  CHECK_NOTHROW(v.window(19, 20));
  CHECK_THROWS_AS(v.window(18, 20), RangeError);
  CHECK_THROWS_AS(v.window(20, 2), RangeError);
}
