#include "trajcast/types.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace trajcast {

ClassId::ClassId(int index) : index_(index) {
  if (index < 0 || index >= kNumClasses) {
    throw RangeError("class index " + std::to_string(index) + " outside [0, 15]");
  }
}

double Vec2::norm() const { return std::hypot(x, y); }

bool BBox::valid() const noexcept {
  for (double v : {cx, cy, w, h}) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) return false;
  }
  return true;
}

void validate_box(const BBox& box, std::string_view what) {
  if (!box.valid()) {
    std::ostringstream os;
    os << what << ": box (" << box.cx << ", " << box.cy << ", " << box.w << ", " << box.h
       << ") outside [0,1]";
    throw InputError(os.str());
  }
}

void FrameDetections::set(ClassId id, const BBox& box) {
  validate_box(box, "class " + std::to_string(id.index()));
  presence_[id.index()] = true;
  boxes_[id.index()] = box;
}

void FrameDetections::clear(ClassId id) noexcept {
  presence_[id.index()] = false;
  boxes_[id.index()] = BBox{};
}

bool FrameDetections::merge_largest(ClassId id, const BBox& box) {
  if (!present(id)) {
    set(id, box);
    return false;
  }
  if (box.area() > boxes_[id.index()].area()) set(id, box);
  return true;
}

void FrameDetections::write_token(double* out) const noexcept {
  for (int k = 0; k < kNumClasses; ++k) {
    const BBox& b = boxes_[k];
    out[0] = presence_[k] ? 1.0 : 0.0;
    out[1] = b.cx;
    out[2] = b.cy;
    out[3] = b.w;
    out[4] = b.h;
    out += kRowWidth;
  }
}

DetectionWindow::DetectionWindow(std::shared_ptr<const std::vector<FrameDetections>> source,
                                 std::size_t offset, int length, std::string video_id,
                                 std::int64_t t)
    : source_(std::move(source)),
      offset_(offset),
      length_(length),
      video_id_(std::move(video_id)),
      t_(t) {
  if (!source_ || length_ < 0 || offset_ + static_cast<std::size_t>(length_) > source_->size()) {
    throw ShapeError("detection window exceeds its source frames");
  }
}

DetectionWindow DetectionWindow::from_frames(std::vector<FrameDetections> frames,
                                             std::string video_id, std::int64_t t) {
  const int n = static_cast<int>(frames.size());
  auto source = std::make_shared<const std::vector<FrameDetections>>(std::move(frames));
  return DetectionWindow(std::move(source), 0, n, std::move(video_id), t < 0 ? n - 1 : t);
}

Matrix DetectionWindow::to_tokens() const {
  Matrix tokens(length(), kTokenDim);
  for (int i = 0; i < length(); ++i) frame(i).write_token(tokens.row(i).data());
  return tokens;
}

DeltaTrajectory::DeltaTrajectory(Matrix deltas) : deltas_(std::move(deltas)) {
  if (deltas_.cols() != 4) {
    throw ShapeError("delta trajectory needs 4 columns, got " + std::to_string(deltas_.cols()));
  }
  if (!deltas_.allFinite()) throw InputError("delta trajectory contains non-finite values");
}

DeltaTrajectory DeltaTrajectory::zeros(int horizon) {
  return DeltaTrajectory(Matrix::Zero(horizon, 4));
}

Vec2 DeltaTrajectory::summed_center(int rows) const {
  const int n = rows < 0 ? horizon() : std::min(rows, horizon());
  Vec2 sum;
  for (int r = 0; r < n; ++r) {
    sum.x += deltas_(r, 0);
    sum.y += deltas_(r, 1);
  }
  return sum;
}

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::up: return "up";
    case Direction::left: return "left";
    case Direction::down: return "down";
    case Direction::right: return "right";
  }
  return "?";
}

double displacement_angle(Vec2 disp) {
  if (!std::isfinite(disp.x) || !std::isfinite(disp.y)) {
    throw NoDirection("displacement is not finite");
  }
  if (disp.x == 0.0 && disp.y == 0.0) throw NoDirection("zero displacement has no direction");
  double deg = std::atan2(-disp.y, disp.x) * 180.0 / std::numbers::pi;
  if (deg < 0.0) deg += 360.0;
  // atan2 of a tiny negative angle can round up to exactly 360.
  if (deg >= 360.0) deg -= 360.0;
  return deg;
}

Direction classify_direction(double angle_deg) {
  if (angle_deg >= 45.0 && angle_deg < 135.0) return Direction::up;
  if (angle_deg >= 135.0 && angle_deg < 225.0) return Direction::left;
  if (angle_deg >= 225.0 && angle_deg < 315.0) return Direction::down;
  return Direction::right;
}

}  // namespace trajcast
