#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "evdeform/geometry.hpp"

namespace evdeform {

struct CameraModel {
  int id = 0;
  CameraIntrinsics intrinsics;
  CameraPose pose;
};

/// A calibrated array: intrinsics and world-to-camera poses, plus the camera
/// whose frame serves as the world frame.
struct CameraRig {
  int reference_camera = 0;
  std::vector<CameraModel> cameras;

  const CameraModel* find(int id) const;
  /// Throws UnknownCamera.
  const CameraModel& at(int id) const;
};

/// JSON document:
///   { "reference_camera": id,
///     "cameras": [ { "id", "width", "height", "fx", "fy", "cx", "cy",
///                    "k1", "k2", "p1", "p2",
///                    "R": [9 values, row major], "T": [3 values] } ] }
/// Numbers use the shortest representation that reads back bit-exact.
std::string rig_to_json(const CameraRig& rig);
CameraRig rig_from_json(const std::string& text);
void write_rig(const std::filesystem::path& path, const CameraRig& rig);
CameraRig read_rig(const std::filesystem::path& path);

/// Writes `contents` to a temporary sibling file, then renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace evdeform
