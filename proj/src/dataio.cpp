#include "trajcast/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

namespace trajcast {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormatName = "trajcast-dataset";
constexpr int kFormatVersion = 1;
constexpr const char* kSplitNames[] = {"detector_train", "forecaster_train", "validation", "test"};

double box_field(const json& det, const char* key, const std::string& where) {
  auto it = det.find(key);
  if (it == det.end() || !it->is_number()) {
    throw ParseError(where + ": detection is missing numeric field '" + key + "'");
  }
  const double v = it->get<double>();
  if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
    std::ostringstream os;
    os << where << ": field '" << key << "' = " << v << " outside [0,1]";
    throw ParseError(os.str());
  }
  return v;
}

json read_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw SchemaError("cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(file.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << text;
  if (!out) throw ConfigError("failed writing " + file.string());
}

}  // namespace

VideoDetections::VideoDetections(std::string video_id, std::int64_t first_frame,
                                 std::vector<FrameDetections> frames)
    : video_id_(std::move(video_id)),
      first_frame_(first_frame),
      frames_(std::make_shared<const std::vector<FrameDetections>>(std::move(frames))) {}

DetectionWindow VideoDetections::window(std::int64_t last, int length) const {
  if (length < 1 || last < length - 1 || last >= this->length()) {
    throw RangeError("window ending at position " + std::to_string(last) + " with length " +
                     std::to_string(length) + " does not fit video " + video_id_);
  }
  return DetectionWindow(frames_, static_cast<std::size_t>(last - length + 1), length, video_id_,
                         first_frame_ + last);
}

const std::vector<std::string>& DatasetSplit::named(const std::string& name) const {
  if (name == "detector_train") return detector_train;
  if (name == "forecaster_train") return forecaster_train;
  if (name == "validation") return validation;
  if (name == "test") return test;
  throw SchemaError("unknown split '" + name + "'");
}

std::vector<std::string>& DatasetSplit::named(const std::string& name) {
  return const_cast<std::vector<std::string>&>(std::as_const(*this).named(name));
}

void DatasetSplit::validate() const {
  std::set<std::string> seen;
  for (const char* name : kSplitNames) {
    for (const auto& id : named(name)) {
      if (!seen.insert(id).second) {
        throw SchemaError("video '" + id + "' appears more than once in the split table");
      }
    }
  }
}

const VideoDetections& Dataset::video(const std::string& id) const {
  for (const auto& v : videos) {
    if (v.video_id() == id) return v;
  }
  throw SchemaError("unknown video '" + id + "'");
}

std::vector<const VideoDetections*> Dataset::videos_in(const std::string& split_name) const {
  std::vector<const VideoDetections*> out;
  for (const auto& id : split.named(split_name)) out.push_back(&video(id));
  return out;
}

std::vector<std::string> default_class_names() {
  std::vector<std::string> names;
  for (int k = 0; k < kNumAnatomyClasses; ++k) {
    names.push_back("anatomy_" + std::string(k < 10 ? "0" : "") + std::to_string(k));
  }
  names.push_back("instrument");
  return names;
}

std::string frame_to_json_line(std::int64_t frame_index, const FrameDetections& frame) {
  json dets = json::array();
  for (int k = 0; k < kNumClasses; ++k) {
    const ClassId id(k);
    if (!frame.present(id)) continue;
    const BBox& b = frame.box(id);
    dets.push_back({{"class", k}, {"cx", b.cx}, {"cy", b.cy}, {"w", b.w}, {"h", b.h}});
  }
  // Key order is fixed by json's sorted object map.
  return json{{"frame", frame_index}, {"detections", std::move(dets)}}.dump();
}

ParsedFrame parse_frame_line(const std::string& line, const std::string& where) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(where + ": " + e.what());
  }
  if (!obj.is_object()) throw ParseError(where + ": frame record must be an object");
  auto frame_it = obj.find("frame");
  if (frame_it == obj.end() || !frame_it->is_number_integer()) {
    throw ParseError(where + ": missing integer field 'frame'");
  }
  auto dets_it = obj.find("detections");
  if (dets_it == obj.end() || !dets_it->is_array()) {
    throw ParseError(where + ": missing array field 'detections'");
  }

  ParsedFrame parsed;
  parsed.index = frame_it->get<std::int64_t>();
  for (const auto& det : *dets_it) {
    if (!det.is_object()) throw ParseError(where + ": detection must be an object");
    auto cls = det.find("class");
    if (cls == det.end() || !cls->is_number_integer()) {
      throw ParseError(where + ": detection is missing integer field 'class'");
    }
    const auto k = cls->get<std::int64_t>();
    if (k < 0 || k >= kNumClasses) {
      throw ParseError(where + ": class " + std::to_string(k) + " outside [0, 15]");
    }
    const BBox box{box_field(det, "cx", where), box_field(det, "cy", where),
                   box_field(det, "w", where), box_field(det, "h", where)};
    const ClassId id(static_cast<int>(k));
    if (parsed.detections.merge_largest(id, box)) {
      parsed.warnings.push_back(where + ": duplicate detection for class " + std::to_string(k) +
                                ", kept the largest box");
    }
  }
  return parsed;
}

void write_video_file(const fs::path& file, const VideoDetections& video) {
  std::string text;
  for (std::int64_t i = 0; i < video.length(); ++i) {
    text += frame_to_json_line(video.first_frame() + i, video.frame(i));
    text += '\n';
  }
  write_text_file(file, text);
}

VideoDetections read_video_file(const fs::path& file, std::vector<std::string>* warnings) {
  std::ifstream in(file);
  if (!in) throw SchemaError("cannot open detection file " + file.string());
  std::vector<FrameDetections> frames;
  std::int64_t first = 0;
  std::int64_t expected = 0;
  std::string line;
  for (std::int64_t line_no = 1; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = file.string() + ":" + std::to_string(line_no);
    ParsedFrame parsed = parse_frame_line(line, where);
    if (frames.empty()) {
      first = parsed.index;
    } else if (parsed.index != expected) {
      throw ParseError(where + ": frame " + std::to_string(parsed.index) + " follows frame " +
                       std::to_string(expected - 1) + "; frames must be consecutive");
    }
    expected = parsed.index + 1;
    if (warnings) {
      warnings->insert(warnings->end(), parsed.warnings.begin(), parsed.warnings.end());
    }
    frames.push_back(parsed.detections);
  }
  return VideoDetections(file.stem().string(), first, std::move(frames));
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
  if (dataset.class_names.size() != static_cast<std::size_t>(kNumClasses)) {
    throw SchemaError("dataset needs exactly 16 class names");
  }
  dataset.split.validate();
  fs::create_directories(dir);

  json manifest;
  manifest["format"] = kFormatName;
  manifest["version"] = kFormatVersion;
  manifest["classes"] = dataset.class_names;
  json splits = json::object();
  for (const char* name : kSplitNames) splits[name] = dataset.split.named(name);
  manifest["splits"] = splits;
  json ids = json::array();
  for (const auto& v : dataset.videos) ids.push_back(v.video_id());
  manifest["videos"] = ids;
  manifest["producer"] = dataset.producer.is_null() ? json::object() : dataset.producer;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");

  for (const auto& v : dataset.videos) write_video_file(dir / (v.video_id() + ".jsonl"), v);
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw SchemaError("no manifest.json in " + dir.string());
  const json manifest = read_json_file(manifest_path);

  Dataset ds;
  try {
    ds.class_names = manifest.at("classes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw SchemaError(manifest_path.string() + ": bad 'classes': " + e.what());
  }
  if (ds.class_names.size() != static_cast<std::size_t>(kNumClasses)) {
    throw SchemaError(manifest_path.string() + ": expected 16 classes, found " +
                      std::to_string(ds.class_names.size()));
  }

  std::vector<std::string> ids;
  try {
    ids = manifest.at("videos").get<std::vector<std::string>>();
    if (manifest.contains("splits")) {
      const json& splits = manifest.at("splits");
      for (const char* name : kSplitNames) {
        if (!splits.contains(name)) continue;
        auto list = splits.at(name).get<std::vector<std::string>>();
        ds.split.named(name) = std::move(list);
      }
    }
  } catch (const json::exception& e) {
    throw SchemaError(manifest_path.string() + ": " + e.what());
  }
  ds.split.validate();
  ds.producer = manifest.value("producer", json::object());

  std::set<std::string> known;
  for (const auto& id : ids) {
    if (!known.insert(id).second) throw SchemaError("video '" + id + "' listed twice");
    ds.videos.push_back(read_video_file(dir / (id + ".jsonl"), &ds.warnings));
  }
  for (const char* name : kSplitNames) {
    for (const auto& id : ds.split.named(name)) {
      if (!known.count(id)) {
        throw SchemaError(std::string("split '") + name + "' names unknown video '" + id + "'");
      }
    }
  }
  return ds;
}

std::int64_t window_count(std::int64_t video_length, int window_length, int horizon, int stride) {
  const std::int64_t span = video_length - window_length - horizon + 1;
  if (span <= 0) return 0;
  return (span + stride - 1) / stride;
}

std::vector<Sample> extract_samples(const VideoDetections& video, int window_length, int horizon,
                                    int stride) {
  if (window_length < 1 || horizon < 1 || stride < 1) {
    throw ConfigError("extract_samples needs s >= 1, f >= 1 and stride >= 1");
  }
  const ClassId inst = ClassId::instrument();
  const std::int64_t n = window_count(video.length(), window_length, horizon, stride);
  const int rows8 = std::min(horizon, 8);

  std::vector<Sample> samples;
  for (std::int64_t w = 0; w < n; ++w) {
    const std::int64_t last = w * stride + window_length - 1;
    bool present = true;
    for (std::int64_t i = last; i <= last + horizon && present; ++i) {
      present = video.frame(i).present(inst);
    }
    if (!present) continue;

    Matrix deltas(horizon, 4);
    for (int r = 1; r <= horizon; ++r) {
      const BBox& cur = video.frame(last + r).box(inst);
      const BBox& prev = video.frame(last + r - 1).box(inst);
      deltas(r - 1, 0) = cur.cx - prev.cx;
      deltas(r - 1, 1) = cur.cy - prev.cy;
      deltas(r - 1, 2) = cur.w - prev.w;
      deltas(r - 1, 3) = cur.h - prev.h;
    }
    Sample s{video.window(last, window_length), DeltaTrajectory(std::move(deltas)), {},
             video.frame(last).box(inst)};
    s.gt_displacement8 = s.target.summed_center(rows8);
    samples.push_back(std::move(s));
  }
  return samples;
}

bool passes_magnitude(const Sample& sample, double threshold) {
  return threshold == 0.0 || sample.gt_displacement8.norm() > threshold;
}

std::vector<Sample> filter_by_magnitude(const std::vector<Sample>& samples, double threshold) {
  if (!(threshold >= 0.0)) throw ConfigError("magnitude threshold must be >= 0");
  std::vector<Sample> kept;
  for (const auto& s : samples) {
    if (passes_magnitude(s, threshold)) kept.push_back(s);
  }
  return kept;
}

}  // namespace trajcast
