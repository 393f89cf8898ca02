#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "trajcast/errors.hpp"

namespace trajcast {

inline constexpr int kNumClasses = 16;
inline constexpr int kNumAnatomyClasses = 15;
inline constexpr int kInstrumentIndex = 15;
/// Values per class row: presence flag followed by cx, cy, w, h.
inline constexpr int kRowWidth = 5;
inline constexpr int kTokenDim = kNumClasses * kRowWidth;

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Index into the 16 detection classes. 0..14 are anatomy, 15 is the instrument.
class ClassId {
 public:
  explicit ClassId(int index);
  static ClassId instrument() { return ClassId(kInstrumentIndex); }

  int index() const noexcept { return index_; }
  bool is_instrument() const noexcept { return index_ == kInstrumentIndex; }
  bool is_anatomy() const noexcept { return index_ < kInstrumentIndex; }

  friend bool operator==(ClassId, ClassId) = default;
  friend auto operator<=>(ClassId, ClassId) = default;

 private:
  int index_;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  double norm() const;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

/// Normalized box: center (cx, cy), size (w, h). Image convention, y grows downward.
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const noexcept { return w * h; }
  Vec2 center() const noexcept { return {cx, cy}; }
  bool valid() const noexcept;
  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Throws InputError naming `what` if the box violates the [0,1] bounds.
void validate_box(const BBox& box, std::string_view what);

/// Presence flags plus boxes for all 16 classes in one frame. Absent rows hold a zero box.
class FrameDetections {
 public:
  FrameDetections() = default;

  bool present(ClassId id) const noexcept { return presence_[id.index()]; }
  const BBox& box(ClassId id) const noexcept { return boxes_[id.index()]; }

  void set(ClassId id, const BBox& box);
  void clear(ClassId id) noexcept;

  /// Keeps whichever of the current and the offered box has the larger area.
  /// Returns true if a box was already present.
  bool merge_largest(ClassId id, const BBox& box);

  /// Writes the 80-value row-major token (presence, cx, cy, w, h per class).
  void write_token(double* out) const noexcept;

  friend bool operator==(const FrameDetections&, const FrameDetections&) = default;

 private:
  std::array<bool, kNumClasses> presence_{};
  std::array<BBox, kNumClasses> boxes_{};
};

/// s consecutive frames ending at frame `t` of video `video_id`. Shares the frame
/// storage of its source video instead of copying it.
class DetectionWindow {
 public:
  DetectionWindow() = default;
  DetectionWindow(std::shared_ptr<const std::vector<FrameDetections>> source, std::size_t offset,
                  int length, std::string video_id, std::int64_t t);
  /// Window owning a copy of `frames`; t is the index of the last frame.
  static DetectionWindow from_frames(std::vector<FrameDetections> frames, std::string video_id = {},
                                     std::int64_t t = -1);

  int length() const noexcept { return length_; }
  const FrameDetections& frame(int i) const { return (*source_)[offset_ + i]; }
  const std::string& video_id() const noexcept { return video_id_; }
  std::int64_t t() const noexcept { return t_; }

  /// s x 80 matrix of per-frame tokens.
  Matrix to_tokens() const;

 private:
  std::shared_ptr<const std::vector<FrameDetections>> source_;
  std::size_t offset_ = 0;
  int length_ = 0;
  std::string video_id_;
  std::int64_t t_ = 0;
};

/// f x 4 frame-to-frame box changes (dcx, dcy, dw, dh).
class DeltaTrajectory {
 public:
  DeltaTrajectory() = default;
  explicit DeltaTrajectory(Matrix deltas);
  static DeltaTrajectory zeros(int horizon);

  int horizon() const noexcept { return static_cast<int>(deltas_.rows()); }
  const Matrix& deltas() const noexcept { return deltas_; }
  double operator()(int row, int col) const { return deltas_(row, col); }

  /// Sum of (dcx, dcy) over the first `rows` frames (all frames by default).
  Vec2 summed_center(int rows = -1) const;

 private:
  Matrix deltas_;
};

enum class Direction { up, left, down, right };

std::string_view to_string(Direction d);

/// Angle in degrees in [0, 360) of (dx, -dy), counterclockwise from +x.
/// Flips y so that upward motion on screen maps to 90 degrees.
double displacement_angle(Vec2 disp);

/// Quadrants: [45,135) up, [135,225) left, [225,315) down, rest right.
Direction classify_direction(double angle_deg);

inline Direction direction_of(Vec2 disp) { return classify_direction(displacement_angle(disp)); }

}  // namespace trajcast
