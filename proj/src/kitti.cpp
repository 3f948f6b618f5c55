#include "hvpr/kitti.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "hvpr/error.hpp"

namespace hvpr {

CalibMatrices CalibMatrices::kitti_axes() {
  CalibMatrices c;
  c.tr = {0, -1, 0, 0, 0, 0, -1, 0, 1, 0, 0, 0};
  return c;
}

namespace kitti {

namespace {

using Mat3 = std::array<double, 9>;

double det3(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 inverse3(const Mat3& m, const char* what) {
  const double d = det3(m);
  if (!(std::abs(d) > 1e-12)) throw DataError(std::string("calib: ") + what + " is singular");
  const double s = 1.0 / d;
  return {(m[4] * m[8] - m[5] * m[7]) * s, (m[2] * m[7] - m[1] * m[8]) * s, (m[1] * m[5] - m[2] * m[4]) * s,
          (m[5] * m[6] - m[3] * m[8]) * s, (m[0] * m[8] - m[2] * m[6]) * s, (m[2] * m[3] - m[0] * m[5]) * s,
          (m[3] * m[7] - m[4] * m[6]) * s, (m[1] * m[6] - m[0] * m[7]) * s, (m[0] * m[4] - m[1] * m[3]) * s};
}

std::array<double, 3> apply3(const Mat3& m, const std::array<double, 3>& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 rotation_of(const std::array<double, 12>& tr) {
  return {tr[0], tr[1], tr[2], tr[4], tr[5], tr[6], tr[8], tr[9], tr[10]};
}

void validate_calib(const CalibMatrices& calib) {
  inverse3(calib.r0, "R0_rect");
  const Mat3 rot = rotation_of(calib.tr);
  inverse3(rot, "Tr_velo_to_cam rotation");
  // R·Rᵀ ≈ I
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += rot[i * 3 + k] * rot[j * 3 + k];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-3) {
        throw DataError("calib: Tr_velo_to_cam rotation is not orthonormal");
      }
    }
  }
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

double parse_double(std::string_view token, std::size_t line_no, const char* what) {
  double v = 0.0;
  const char* begin = token.data();
  const char* end = token.data() + token.size();
  if (!token.empty() && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ParseError(std::string(what) + ": bad number '" + std::string(token) + "' on line " +
                         std::to_string(line_no),
                     line_no);
  }
  return v;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    fn(line, line_no);
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

PointCloud parse_velodyne_bin(std::span<const unsigned char> bytes) {
  constexpr std::size_t kRecord = 16;
  if (bytes.size() % kRecord != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kRecord;
    throw ParseError("velodyne: trailing partial record at byte offset " + std::to_string(offset), offset);
  }
  PointCloud cloud;
  cloud.points.reserve(bytes.size() / kRecord);
  for (std::size_t rec = 0; rec < bytes.size() / kRecord; ++rec) {
    double vals[4];
    for (std::size_t f = 0; f < 4; ++f) {
      const unsigned char* p = &bytes[rec * kRecord + f * 4];
      const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
                                 static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
      vals[f] = static_cast<double>(std::bit_cast<float>(bits));
      if (!std::isfinite(vals[f])) {
        throw ParseError("velodyne: non-finite value in record " + std::to_string(rec), rec * kRecord + f * 4);
      }
    }
    cloud.points.push_back({vals[0], vals[1], vals[2], vals[3]});
  }
  return cloud;
}

std::vector<unsigned char> serialize_velodyne_bin(const PointCloud& cloud) {
  std::vector<unsigned char> out;
  out.reserve(cloud.size() * 16);
  for (const Point& p : cloud.points) {
    for (double v : {p.x, p.y, p.z, p.reflectance}) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
    }
  }
  return out;
}

CalibMatrices parse_calib(std::string_view text) {
  std::map<std::string, std::vector<double>, std::less<>> rows;
  for_each_line(text, [&](std::string_view line, std::size_t line_no) {
    const std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) {
      if (!split_ws(line).empty()) {
        throw ParseError("calib: missing ':' on line " + std::to_string(line_no), line_no);
      }
      return;
    }
    std::vector<double> values;
    for (auto tok : split_ws(line.substr(colon + 1))) values.push_back(parse_double(tok, line_no, "calib"));
    std::string key(line.substr(0, colon));
    key.erase(0, key.find_first_not_of(" \t"));
    rows[key] = std::move(values);
  });
  CalibMatrices calib;
  auto r0 = rows.find("R0_rect");
  auto tr = rows.find("Tr_velo_to_cam");
  if (r0 == rows.end() || r0->second.size() != 9) throw DataError("calib: R0_rect must have 9 values");
  if (tr == rows.end() || tr->second.size() != 12) throw DataError("calib: Tr_velo_to_cam must have 12 values");
  std::copy(r0->second.begin(), r0->second.end(), calib.r0.begin());
  std::copy(tr->second.begin(), tr->second.end(), calib.tr.begin());
  validate_calib(calib);
  return calib;
}

std::string format_calib(const CalibMatrices& calib) {
  std::ostringstream os;
  os << "R0_rect:";
  for (double v : calib.r0) os << ' ' << format_double(v);
  os << "\nTr_velo_to_cam:";
  for (double v : calib.tr) os << ' ' << format_double(v);
  os << '\n';
  return os.str();
}

std::vector<GroundTruthBox> kitti_label_to_lidar_boxes(std::string_view label_text,
                                                       const CalibMatrices& calib) {
  validate_calib(calib);
  const Mat3 r0_inv = inverse3(calib.r0, "R0_rect");
  const Mat3 rot_inv = inverse3(rotation_of(calib.tr), "Tr_velo_to_cam rotation");
  const std::array<double, 3> t = {calib.tr[3], calib.tr[7], calib.tr[11]};
  std::vector<GroundTruthBox> boxes;
  for_each_line(label_text, [&](std::string_view line, std::size_t line_no) {
    const auto fields = split_ws(line);
    if (fields.empty()) return;
    if (fields.size() != 15) {
      throw ParseError("label: line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                           " fields, expected 15",
                       line_no);
    }
    if (fields[0] == "DontCare") return;
    double v[15];
    for (std::size_t i = 1; i < 15; ++i) v[i] = parse_double(fields[i], line_no, "label");
    const double h = v[8], w = v[9], l = v[10];
    if (!(h > 0 && w > 0 && l > 0)) {
      throw ParseError("label: non-positive box size on line " + std::to_string(line_no), line_no);
    }
    const auto rect = apply3(r0_inv, {v[11], v[12], v[13]});
    const auto lidar = apply3(rot_inv, {rect[0] - t[0], rect[1] - t[1], rect[2] - t[2]});
    GroundTruthBox gt;
    gt.label = std::string(fields[0]);
    gt.difficulty = static_cast<int>(v[2]);
    gt.box = {lidar[0], lidar[1], lidar[2] + 0.5 * h, w, l, h, normalize_angle(-v[14] - std::numbers::pi / 2)};
    boxes.push_back(gt);
  });
  return boxes;
}

std::string lidar_boxes_to_kitti_label(const std::vector<GroundTruthBox>& boxes,
                                       const CalibMatrices& calib) {
  validate_calib(calib);
  const Mat3 rot = rotation_of(calib.tr);
  std::ostringstream os;
  for (const auto& gt : boxes) {
    const Box3D& b = gt.box;
    const auto cam_raw = apply3(rot, {b.x, b.y, b.z - 0.5 * b.h});
    const auto cam = apply3(calib.r0, {cam_raw[0] + calib.tr[3], cam_raw[1] + calib.tr[7], cam_raw[2] + calib.tr[11]});
    const double ry = normalize_angle(-b.heading - std::numbers::pi / 2);
    const double alpha = normalize_angle(ry - std::atan2(cam[0], cam[2]));
    os << gt.label << " 0 " << std::max(gt.difficulty, 0) << ' ' << format_double(alpha) << " 0 0 0 0 "
       << format_double(b.h) << ' ' << format_double(b.w) << ' ' << format_double(b.l) << ' '
       << format_double(cam[0]) << ' ' << format_double(cam[1]) << ' ' << format_double(cam[2]) << ' '
       << format_double(ry) << '\n';
  }
  return os.str();
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> list_scene_ids(const std::filesystem::path& root) {
  const auto dir = root / "velodyne";
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("dataset '" + root.string() + "' has no velodyne/ directory");
  }
  std::vector<std::string> ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".bin") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

Scene load_scene(const std::filesystem::path& root, const std::string& id) {
  Scene scene;
  scene.id = id;
  scene.cloud = parse_velodyne_bin(read_file_bytes(root / "velodyne" / (id + ".bin")));
  const auto calib_path = root / "calib" / (id + ".txt");
  const CalibMatrices calib = std::filesystem::exists(calib_path) ? parse_calib(read_text_file(calib_path))
                                                                  : CalibMatrices::identity();
  const auto label_path = root / "label_2" / (id + ".txt");
  if (std::filesystem::exists(label_path)) {
    scene.boxes = kitti_label_to_lidar_boxes(read_text_file(label_path), calib);
  }
  return scene;
}

void write_scene(const std::filesystem::path& root, const Scene& scene, const CalibMatrices& calib) {
  for (const char* sub : {"velodyne", "label_2", "calib"}) std::filesystem::create_directories(root / sub);
  const auto bytes = serialize_velodyne_bin(scene.cloud);
  std::ofstream bin(root / "velodyne" / (scene.id + ".bin"), std::ios::binary);
  bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  std::ofstream(root / "label_2" / (scene.id + ".txt")) << lidar_boxes_to_kitti_label(scene.boxes, calib);
  std::ofstream(root / "calib" / (scene.id + ".txt")) << format_calib(calib);
  if (!bin) throw DataError("failed writing scene '" + scene.id + "'");
}

}  // namespace kitti
}  // namespace hvpr
