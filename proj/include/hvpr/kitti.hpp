#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hvpr/scene.hpp"

namespace hvpr::kitti {

// Consecutive little-endian float32 quadruples (x, y, z, reflectance).
PointCloud parse_velodyne_bin(std::span<const unsigned char> bytes);
std::vector<unsigned char> serialize_velodyne_bin(const PointCloud& cloud);

// "key: v0 v1 ..." lines; requires R0_rect (9) and Tr_velo_to_cam (12).
CalibMatrices parse_calib(std::string_view text);
std::string format_calib(const CalibMatrices& calib);

// 15-field KITTI label lines → LiDAR-frame boxes with volumetric centers.
// DontCare entries are skipped.
std::vector<GroundTruthBox> kitti_label_to_lidar_boxes(std::string_view label_text,
                                                       const CalibMatrices& calib);
std::string lidar_boxes_to_kitti_label(const std::vector<GroundTruthBox>& boxes,
                                       const CalibMatrices& calib);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

// Dataset directory with velodyne/<id>.bin, label_2/<id>.txt and
// calib/<id>.txt. A missing calib file means identity calibration; a
// missing label file means an unlabeled scene.
std::vector<std::string> list_scene_ids(const std::filesystem::path& root);
Scene load_scene(const std::filesystem::path& root, const std::string& id);
void write_scene(const std::filesystem::path& root, const Scene& scene, const CalibMatrices& calib);

}  // namespace hvpr::kitti
