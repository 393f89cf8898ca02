#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "trajcast/types.hpp"

namespace trajcast {

/// Frames of one video. Frame indices run from `first_frame` without gaps.
class VideoDetections {
 public:
  VideoDetections() = default;
  VideoDetections(std::string video_id, std::int64_t first_frame,
                  std::vector<FrameDetections> frames);

  const std::string& video_id() const noexcept { return video_id_; }
  std::int64_t first_frame() const noexcept { return first_frame_; }
  std::int64_t length() const noexcept { return static_cast<std::int64_t>(frames_->size()); }
  const std::vector<FrameDetections>& frames() const noexcept { return *frames_; }
  const FrameDetections& frame(std::int64_t i) const { return (*frames_)[i]; }

  /// Window of `length` frames whose last frame is at position `last`.
  DetectionWindow window(std::int64_t last, int length) const;

 private:
  std::string video_id_;
  std::int64_t first_frame_ = 0;
  std::shared_ptr<const std::vector<FrameDetections>> frames_ =
      std::make_shared<const std::vector<FrameDetections>>();
};

struct Sample {
  DetectionWindow window;
  DeltaTrajectory target;
  /// Summed center displacement over the first 8 future frames.
  Vec2 gt_displacement8;
  /// Instrument box in the window's last frame.
  BBox instrument_at_t;
};

/// Named, disjoint lists of video ids.
struct DatasetSplit {
  std::vector<std::string> detector_train;
  std::vector<std::string> forecaster_train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  /// Throws SchemaError on an unknown split name.
  const std::vector<std::string>& named(const std::string& name) const;
  std::vector<std::string>& named(const std::string& name);
  /// Throws SchemaError if any id appears twice.
  void validate() const;
};

struct Dataset {
  std::vector<std::string> class_names;
  DatasetSplit split;
  std::vector<VideoDetections> videos;
  /// Generator settings or other producer metadata, carried verbatim.
  nlohmann::json producer;
  /// Non-fatal issues found while loading, e.g. duplicate detections.
  std::vector<std::string> warnings;

  const VideoDetections& video(const std::string& id) const;
  /// Videos listed in the named split, in split order.
  std::vector<const VideoDetections*> videos_in(const std::string& split_name) const;
};

// Detection file lines: {"frame": n, "detections": [{"class": k, "cx":..,"cy":..,"w":..,"h":..}]}

std::string frame_to_json_line(std::int64_t frame_index, const FrameDetections& frame);

struct ParsedFrame {
  std::int64_t index = 0;
  FrameDetections detections;
  std::vector<std::string> warnings;
};

/// Throws ParseError (with `where` in the message) on malformed input.
ParsedFrame parse_frame_line(const std::string& line, const std::string& where);

void write_video_file(const std::filesystem::path& file, const VideoDetections& video);
VideoDetections read_video_file(const std::filesystem::path& file, std::vector<std::string>* warnings);

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

std::vector<std::string> default_class_names();

/// Windows start at offsets 0, stride, 2*stride, ... and are kept only when the instrument
/// is present in the last window frame and in each of the `horizon` frames after it.
std::vector<Sample> extract_samples(const VideoDetections& video, int window_length, int horizon,
                                    int stride);

/// Number of window offsets before the presence filter: max(0, ceil((L - s - f + 1) / stride)).
std::int64_t window_count(std::int64_t video_length, int window_length, int horizon, int stride);

/// Keeps samples with |gt_displacement8| > threshold. Threshold 0 keeps everything.
std::vector<Sample> filter_by_magnitude(const std::vector<Sample>& samples, double threshold);
bool passes_magnitude(const Sample& sample, double threshold);

}  // namespace trajcast
