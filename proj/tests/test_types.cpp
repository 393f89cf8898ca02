#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "trajcast/errors.hpp"
#include "trajcast/types.hpp"

using namespace trajcast;

namespace {

// Quadrants centred on the axes, counted counterclockwise from +x.
Direction oracle(double deg) {
  const int q = static_cast<int>(std::floor((deg + 45.0) / 90.0)) % 4;
  constexpr Direction order[] = {Direction::right, Direction::up, Direction::left, Direction::down};
  return order[q];
}

}  // namespace

TEST_CASE("class ids") {
  CHECK(ClassId(0).is_anatomy());
  CHECK(ClassId(14).is_anatomy());
  CHECK(ClassId::instrument().index() == 15);
  CHECK_FALSE(ClassId::instrument().is_anatomy());
  CHECK_THROWS_AS(ClassId(16), RangeError);
  CHECK_THROWS_AS(ClassId(-1), RangeError);
}

TEST_CASE("box validation") {
  CHECK_NOTHROW(validate_box({0.5, 0.5, 0.2, 0.2}, "box"));
  CHECK_NOTHROW(validate_box({0.0, 1.0, 0.0, 0.0}, "box"));
  CHECK_THROWS_AS(validate_box({1.1, 0.5, 0.2, 0.2}, "box"), InputError);
  CHECK_THROWS_AS(validate_box({0.5, -0.1, 0.2, 0.2}, "box"), InputError);
  CHECK_THROWS_AS(validate_box({0.5, 0.5, std::nan(""), 0.2}, "box"), InputError);
  CHECK(BBox{0.5, 0.5, 0.2, 0.25}.area() == doctest::Approx(0.05));
}

TEST_CASE("absent classes encode as zero rows") {
  FrameDetections fr;
  fr.set(ClassId(3), {0.25, 0.5, 0.125, 0.0625});
  std::array<double, kTokenDim> token{};
  token.fill(-1.0);
  fr.write_token(token.data());
  for (int c = 0; c < kNumClasses; ++c) {
    for (int k = 0; k < kRowWidth; ++k) {
      const double expect = c != 3 ? 0.0 : std::array<double, 5>{1.0, 0.25, 0.5, 0.125, 0.0625}[k];
      CHECK(token[c * kRowWidth + k] == expect);
    }
  }
  fr.clear(ClassId(3));
  CHECK(fr == FrameDetections{});
}

TEST_CASE("duplicate detections keep the larger box") {
  FrameDetections fr;
  CHECK_FALSE(fr.merge_largest(ClassId(2), {0.5, 0.5, 0.1, 0.1}));
  CHECK(fr.merge_largest(ClassId(2), {0.4, 0.4, 0.2, 0.2}));
  CHECK(fr.box(ClassId(2)).cx == 0.4);
  CHECK(fr.merge_largest(ClassId(2), {0.6, 0.6, 0.05, 0.05}));
  CHECK(fr.box(ClassId(2)).cx == 0.4);
}

TEST_CASE("delta trajectory shape checks") {
  CHECK_THROWS_AS(DeltaTrajectory(Matrix::Zero(4, 3)), ShapeError);
  Matrix bad = Matrix::Zero(2, 4);
  bad(1, 2) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(DeltaTrajectory{bad}, InputError);
  Matrix m(3, 4);
  m << 1, 2, 0, 0, 3, 4, 0, 0, 5, 6, 0, 0;
  const DeltaTrajectory d(m);
  CHECK(d.summed_center().x == 9);
  CHECK(d.summed_center().y == 12);
  CHECK(d.summed_center(2).x == 4);
}

TEST_CASE("half-degree sweep reproduces the quadrant partition") {
  int mismatches = 0;
  for (int k = 0; k < 720; ++k) {
    const double deg = 0.5 * k;
    if (classify_direction(deg) != oracle(deg)) ++mismatches;
  }
  CHECK(mismatches == 0);
  CHECK(classify_direction(45.0) == Direction::up);
  CHECK(classify_direction(135.0) == Direction::left);
  CHECK(classify_direction(225.0) == Direction::down);
  CHECK(classify_direction(315.0) == Direction::right);
  CHECK(classify_direction(std::nextafter(45.0, 0.0)) == Direction::right);
}

TEST_CASE("image y axis points down") {
  CHECK(direction_of({0.0, -1.0}) == Direction::up);
  CHECK(direction_of({0.0, 1.0}) == Direction::down);
  CHECK(direction_of({-1.0, 0.0}) == Direction::left);
  CHECK(direction_of({1.0, 0.0}) == Direction::right);
  CHECK(direction_of({1.0, -1.0}) == Direction::up);
  CHECK(direction_of({-1.0, -1.0}) == Direction::left);
  CHECK(direction_of({-1.0, 1.0}) == Direction::down);
  CHECK(direction_of({1.0, 1.0}) == Direction::right);
  CHECK(displacement_angle({1e-300, -0.0}) == 0.0);
  CHECK(displacement_angle({1.0, 1e-300}) < 360.0);
}

TEST_CASE("zero and non-finite displacements have no direction") {
  CHECK_THROWS_AS(displacement_angle({0.0, 0.0}), NoDirection);
  CHECK_THROWS_AS(displacement_angle({std::nan(""), 1.0}), NoDirection);
}

TEST_CASE("classification is invariant under positive scaling") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> logscale(-4.0, 4.0);
  int changed = 0;
  for (int i = 0; i < 10000; ++i) {
    const Vec2 v{n(rng), n(rng)};
    const double s = std::pow(10.0, logscale(rng));
    if (direction_of(v) != direction_of({v.x * s, v.y * s})) ++changed;
  }
  CHECK(changed == 0);
}
