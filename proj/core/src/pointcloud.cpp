#include "lpr/pointcloud.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace lpr {

PointCloud load_scan_bin(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) {
    throw IoError("cannot open scan file: " + path);
  }
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % 16 != 0) {
    throw MalformedFileError("scan file length " + std::to_string(bytes) +
                             " is not a multiple of 16: " + path);
  }
  in.seekg(0);

  PointCloud cloud;
  cloud.points.resize(bytes / 16);
  std::vector<float> buf(bytes / 4);
  if (!buf.empty() &&
      !in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes))) {
    throw IoError("short read on scan file: " + path);
  }
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    cloud.points[i] = Point{buf[4 * i + 0], buf[4 * i + 1], buf[4 * i + 2],
                            buf[4 * i + 3]};
  }
  return cloud;
}

void save_scan_bin(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open scan file for writing: " + path);
  }
  for (const auto& p : cloud.points) {
    const float rec[4] = {static_cast<float>(p.x), static_cast<float>(p.y),
                          static_cast<float>(p.z),
                          static_cast<float>(p.intensity)};
    out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
  }
  if (!out) {
    throw IoError("write failure on scan file: " + path);
  }
}

namespace {

// Nearest rotation in Frobenius norm, with the usual determinant fix.
Eigen::Matrix3d project_to_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return r;
}

}  // namespace

std::vector<Pose> load_pose_file(const std::string& path, double timestamp_period) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open pose file: " + path);
  }
  std::vector<Pose> poses;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    std::istringstream iss(line);
    double v[12];
    for (int i = 0; i < 12; ++i) {
      if (!(iss >> v[i])) {
        throw ParseError("pose file " + path + ": line " +
                         std::to_string(line_no) + ": expected 12 reals");
      }
    }
    double extra;
    if (iss >> extra) {
      throw ParseError("pose file " + path + ": line " +
                       std::to_string(line_no) + ": more than 12 values");
    }

    Pose pose;
    pose.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    pose.translation << v[3], v[7], v[11];
    pose.timestamp = static_cast<double>(poses.size()) * timestamp_period;

    const double drift =
        (pose.rotation.transpose() * pose.rotation - Eigen::Matrix3d::Identity())
            .norm();
    if (drift > 1e-6) {
      pose.rotation = project_to_rotation(pose.rotation);
    }
    poses.push_back(pose);
  }
  return poses;
}

std::vector<double> load_times_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open times file: " + path);
  }
  std::vector<double> times;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    std::istringstream iss(line);
    double t;
    if (!(iss >> t)) {
      throw ParseError("times file " + path + ": line " +
                       std::to_string(line_no) + ": expected a real");
    }
    times.push_back(t);
  }
  return times;
}

PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size) {
  if (voxel_size <= 0.0) {
    throw InvalidInputError("voxel_size must be positive");
  }

  struct Acc {
    double x = 0, y = 0, z = 0, intensity = 0;
    std::size_t n = 0;
  };
  struct KeyHash {
    std::size_t operator()(const std::array<std::int64_t, 3>& k) const {
      std::uint64_t h = 0xcbf29ce484222325ULL;
      for (auto v : k) {
        h ^= static_cast<std::uint64_t>(v);
        h *= 0x100000001b3ULL;
      }
      return static_cast<std::size_t>(h);
    }
  };

  std::unordered_map<std::array<std::int64_t, 3>, std::size_t, KeyHash> slot_of;
  std::vector<Acc> slots;
  slot_of.reserve(cloud.size());

  for (const auto& p : cloud.points) {
    const std::array<std::int64_t, 3> key = {
        static_cast<std::int64_t>(std::floor(p.x / voxel_size)),
        static_cast<std::int64_t>(std::floor(p.y / voxel_size)),
        static_cast<std::int64_t>(std::floor(p.z / voxel_size))};
    auto [it, inserted] = slot_of.try_emplace(key, slots.size());
    if (inserted) {
      slots.emplace_back();
    }
    Acc& a = slots[it->second];
    a.x += p.x;
    a.y += p.y;
    a.z += p.z;
    a.intensity += p.intensity;
    a.n += 1;
  }

  PointCloud out;
  out.points.reserve(slots.size());
  for (const Acc& a : slots) {
    const double inv = 1.0 / static_cast<double>(a.n);
    out.points.push_back(Point{a.x * inv, a.y * inv, a.z * inv, a.intensity * inv});
  }
  return out;
}

PointCloud remove_ground_ransac(const PointCloud& cloud, double dist_thresh,
                                int max_iters, std::uint64_t rng_seed) {
  const std::size_t n = cloud.size();
  if (n < 3) {
    return cloud;
  }
  if (dist_thresh <= 0.0 || max_iters <= 0) {
    throw InvalidInputError("remove_ground_ransac: dist_thresh and max_iters must be positive");
  }

  std::mt19937_64 rng(rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  Eigen::Vector3d best_normal = Eigen::Vector3d::Zero();
  double best_offset = 0.0;
  std::size_t best_count = 0;

  for (int it = 0; it < max_iters; ++it) {
    const std::size_t i = pick(rng);
    const std::size_t j = pick(rng);
    const std::size_t k = pick(rng);
    if (i == j || j == k || i == k) {
      continue;
    }
    const Eigen::Vector3d a = cloud[i].xyz();
    const Eigen::Vector3d normal = (cloud[j].xyz() - a).cross(cloud[k].xyz() - a);
    const double len = normal.norm();
    if (len < 1e-12) {
      continue;  // collinear sample
    }
    const Eigen::Vector3d unit = normal / len;
    const double offset = unit.dot(a);

    std::size_t count = 0;
    for (const auto& p : cloud.points) {
      if (std::abs(unit.dot(p.xyz()) - offset) < dist_thresh) {
        ++count;
      }
    }
    if (count > best_count) {
      best_count = count;
      best_normal = unit;
      best_offset = offset;
    }
  }

  if (best_count == 0) {
    return cloud;
  }
  // Only planes close to horizontal are treated as ground.
  const double cos30 = std::cos(30.0 * std::numbers::pi / 180.0);
  if (std::abs(best_normal.z()) < cos30) {
    return cloud;
  }

  PointCloud out;
  out.points.reserve(n - best_count);
  for (const auto& p : cloud.points) {
    if (std::abs(best_normal.dot(p.xyz()) - best_offset) >= dist_thresh) {
      out.points.push_back(p);
    }
  }
  return out;
}

PointCloud cap_points(const PointCloud& cloud, std::size_t max_n,
                      std::uint64_t rng_seed) {
  if (max_n == 0) {
    throw InvalidInputError("cap_points: max_n must be positive");
  }
  if (cloud.size() <= max_n) {
    return cloud;
  }

  std::vector<std::size_t> idx(cloud.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(rng_seed);
  // Partial Fisher-Yates: the first max_n slots end up a uniform sample.
  for (std::size_t i = 0; i < max_n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(max_n);
  std::sort(idx.begin(), idx.end());

  PointCloud out;
  out.points.reserve(max_n);
  for (std::size_t i : idx) {
    out.points.push_back(cloud[i]);
  }
  return out;
}

PointCloud augment_jitter(const PointCloud& cloud, double sigma, double clip,
                          std::uint64_t rng_seed) {
  if (sigma < 0.0 || clip < 0.0) {
    throw InvalidInputError("augment_jitter: sigma and clip must be non-negative");
  }
  if (sigma == 0.0) {
    return cloud;
  }
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> noise(0.0, sigma);

  PointCloud out = cloud;
  for (auto& p : out.points) {
    p.x += std::clamp(noise(rng), -clip, clip);
    p.y += std::clamp(noise(rng), -clip, clip);
    p.z += std::clamp(noise(rng), -clip, clip);
  }
  return out;
}

PointCloud augment_rotate_z(const PointCloud& cloud, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  PointCloud out = cloud;
  for (auto& p : out.points) {
    const double x = p.x;
    const double y = p.y;
    p.x = c * x - s * y;
    p.y = s * x + c * y;
  }
  return out;
}

}  // namespace lpr
