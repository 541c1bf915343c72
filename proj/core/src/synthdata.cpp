#include "lpr/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "lpr/pointcloud.hpp"

namespace lpr {

namespace fs = std::filesystem;

PointCloud load_sample_cloud(const Sample& s) {
  if (!s.cloud_path.empty()) {
    return load_scan_bin(s.cloud_path);
  }
  return s.cloud;
}

void WorldConfig::validate() const {
  if (extent <= 0.0) {
    throw ConfigError("world: extent must be positive");
  }
  if (num_clusters < 0 || min_primitives_per_cluster < 0 ||
      max_primitives_per_cluster < min_primitives_per_cluster) {
    throw ConfigError("world: bad cluster counts");
  }
  const bool any_class = boxes || cylinders || walls;
  const bool any_cluster = num_clusters > 0 && max_primitives_per_cluster > 0 && any_class;
  if (!any_cluster && !ground) {
    throw ConfigError("world: configuration produces zero primitives");
  }
  if (ground_density < 0.0 || density_scale <= 0.0) {
    throw ConfigError("world: bad densities");
  }
}

namespace {

constexpr double kBoxIntensity = 0.9;
constexpr double kCylinderIntensity = 0.6;
constexpr double kWallIntensity = 0.35;
constexpr double kGroundIntensity = 0.12;

constexpr double kBoxDensity = 5.0;
constexpr double kCylinderDensity = 6.0;
constexpr double kWallDensity = 4.0;

Eigen::Vector2d rotate2(const Eigen::Vector2d& v, double yaw) {
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

// Horizontal footprint radius, used for the overlap check.
double footprint_radius(const Primitive& p) {
  switch (p.kind) {
    case PrimitiveKind::Box:
    case PrimitiveKind::Wall:
      return std::hypot(p.half.x(), p.half.y());
    case PrimitiveKind::Cylinder:
      return p.half.x();
    case PrimitiveKind::Ground:
      return 0.0;
  }
  return 0.0;
}

std::size_t poisson_count(double mean, std::mt19937_64& rng) {
  if (mean <= 0.0) {
    return 0;
  }
  std::poisson_distribution<long> dist(mean);
  const long v = dist(rng);
  return v > 0 ? static_cast<std::size_t>(v) : 0;
}

// Samples one rectangular patch: origin corner + two edge vectors.
void sample_rect(const Eigen::Vector3d& corner, const Eigen::Vector3d& e1,
                 const Eigen::Vector3d& e2, double density, double intensity,
                 std::mt19937_64& rng, PointCloud& out) {
  const double area = e1.cross(e2).norm();
  const std::size_t count = poisson_count(density * area, rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    const Eigen::Vector3d p = corner + u(rng) * e1 + u(rng) * e2;
    out.points.push_back(Point{p.x(), p.y(), p.z(), intensity});
  }
}

void sample_primitive(const Primitive& prim, std::mt19937_64& rng, PointCloud& out) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (prim.kind) {
    case PrimitiveKind::Box: {
      const Eigen::Vector3d h = prim.half;
      // local-frame faces: top plus four sides (bottom sits on the ground)
      struct Face {
        Eigen::Vector3d corner, e1, e2;
      };
      const std::vector<Face> faces = {
          {{-h.x(), -h.y(), h.z()}, {2 * h.x(), 0, 0}, {0, 2 * h.y(), 0}},   // top
          {{-h.x(), -h.y(), -h.z()}, {2 * h.x(), 0, 0}, {0, 0, 2 * h.z()}},  // -y
          {{-h.x(), h.y(), -h.z()}, {2 * h.x(), 0, 0}, {0, 0, 2 * h.z()}},   // +y
          {{-h.x(), -h.y(), -h.z()}, {0, 2 * h.y(), 0}, {0, 0, 2 * h.z()}},  // -x
          {{h.x(), -h.y(), -h.z()}, {0, 2 * h.y(), 0}, {0, 0, 2 * h.z()}},   // +x
      };
      for (const auto& f : faces) {
        PointCloud local;
        sample_rect(f.corner, f.e1, f.e2, prim.density, prim.intensity, rng, local);
        for (auto& p : local.points) {
          const Eigen::Vector2d xy = rotate2({p.x, p.y}, prim.yaw);
          out.points.push_back(Point{prim.center.x() + xy.x(),
                                     prim.center.y() + xy.y(),
                                     prim.center.z() + p.z, p.intensity});
        }
      }
      break;
    }
    case PrimitiveKind::Cylinder: {
      const double radius = prim.half.x();
      const double hh = prim.half.z();
      const double lateral_area = 2.0 * std::numbers::pi * radius * 2.0 * hh;
      const std::size_t n_lat = poisson_count(prim.density * lateral_area, rng);
      for (std::size_t i = 0; i < n_lat; ++i) {
        const double a = u(rng) * 2.0 * std::numbers::pi;
        const double z = (2.0 * u(rng) - 1.0) * hh;
        out.points.push_back(Point{prim.center.x() + radius * std::cos(a),
                                   prim.center.y() + radius * std::sin(a),
                                   prim.center.z() + z, prim.intensity});
      }
      const double top_area = std::numbers::pi * radius * radius;
      const std::size_t n_top = poisson_count(prim.density * top_area, rng);
      for (std::size_t i = 0; i < n_top; ++i) {
        // uniform over the disk
        const double rr = radius * std::sqrt(u(rng));
        const double a = u(rng) * 2.0 * std::numbers::pi;
        out.points.push_back(Point{prim.center.x() + rr * std::cos(a),
                                   prim.center.y() + rr * std::sin(a),
                                   prim.center.z() + hh, prim.intensity});
      }
      break;
    }
    case PrimitiveKind::Wall: {
      PointCloud local;
      sample_rect({-prim.half.x(), 0.0, -prim.half.z()},
                  {2 * prim.half.x(), 0, 0}, {0, 0, 2 * prim.half.z()},
                  prim.density, prim.intensity, rng, local);
      for (auto& p : local.points) {
        const Eigen::Vector2d xy = rotate2({p.x, p.y}, prim.yaw);
        out.points.push_back(Point{prim.center.x() + xy.x(),
                                   prim.center.y() + xy.y(),
                                   prim.center.z() + p.z, p.intensity});
      }
      break;
    }
    case PrimitiveKind::Ground: {
      sample_rect(prim.center - Eigen::Vector3d(prim.half.x(), prim.half.y(), 0.0),
                  {2 * prim.half.x(), 0, 0}, {0, 2 * prim.half.y(), 0},
                  prim.density, prim.intensity, rng, out);
      break;
    }
  }
}

}  // namespace

SyntheticWorld generate_world(const WorldConfig& config, std::uint64_t seed) {
  config.validate();

  SyntheticWorld world;
  world.seed = seed;
  std::mt19937_64 rng(mix_seed(seed, 0x5EED));
  std::uniform_real_distribution<double> u(0.0, 1.0);

  std::vector<PrimitiveKind> enabled;
  if (config.boxes) enabled.push_back(PrimitiveKind::Box);
  if (config.cylinders) enabled.push_back(PrimitiveKind::Cylinder);
  if (config.walls) enabled.push_back(PrimitiveKind::Wall);

  if (config.ground) {
    Primitive g;
    g.kind = PrimitiveKind::Ground;
    g.center = {config.extent / 2.0, config.extent / 2.0, 0.0};
    g.half = {config.extent / 2.0, config.extent / 2.0, 0.0};
    g.intensity = kGroundIntensity;
    g.density = config.ground_density * config.density_scale;
    world.primitives.push_back(g);
  }

  if (!enabled.empty() && config.num_clusters > 0) {
    const int grid = static_cast<int>(
        std::ceil(std::sqrt(static_cast<double>(config.num_clusters))));
    const double cell = config.extent / static_cast<double>(grid);

    for (int c = 0; c < config.num_clusters; ++c) {
      const double cx = (static_cast<double>(c % grid) + 0.5) * cell +
                        (u(rng) - 0.5) * 0.3 * cell;
      const double cy = (static_cast<double>(c / grid) + 0.5) * cell +
                        (u(rng) - 0.5) * 0.3 * cell;

      // Each cluster leans toward one primitive kind so regions differ in
      // local geometry.
      const PrimitiveKind dominant = enabled[static_cast<std::size_t>(
          u(rng) * static_cast<double>(enabled.size()))];
      std::uniform_int_distribution<int> count_dist(
          config.min_primitives_per_cluster, config.max_primitives_per_cluster);
      const int count = count_dist(rng);

      std::vector<Primitive> placed;
      for (int k = 0; k < count; ++k) {
        const PrimitiveKind kind =
            u(rng) < 0.7 ? dominant
                         : enabled[static_cast<std::size_t>(
                               u(rng) * static_cast<double>(enabled.size()))];
        Primitive prim;
        prim.kind = kind;
        prim.yaw = u(rng) * 2.0 * std::numbers::pi;
        switch (kind) {
          case PrimitiveKind::Box: {
            const double hx = 0.4 + 1.4 * u(rng);
            const double hy = 0.4 + 1.4 * u(rng);
            const double hz = 0.5 + 1.5 * u(rng);
            prim.half = {hx, hy, hz};
            prim.intensity = kBoxIntensity;
            prim.density = kBoxDensity * config.density_scale;
            break;
          }
          case PrimitiveKind::Cylinder: {
            const double radius = 0.3 + 0.9 * u(rng);
            const double hh = 0.8 + 1.7 * u(rng);
            prim.half = {radius, radius, hh};
            prim.intensity = kCylinderIntensity;
            prim.density = kCylinderDensity * config.density_scale;
            break;
          }
          case PrimitiveKind::Wall: {
            const double hl = 1.5 + 2.5 * u(rng);
            const double hh = 1.0 + 1.5 * u(rng);
            prim.half = {hl, 0.0, hh};
            prim.intensity = kWallIntensity;
            prim.density = kWallDensity * config.density_scale;
            break;
          }
          case PrimitiveKind::Ground:
            break;
        }

        // place on footprint-disjoint spots; give up after a few tries
        bool ok = false;
        for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
          const double a = u(rng) * 2.0 * std::numbers::pi;
          const double rr = config.cluster_spread * std::sqrt(u(rng));
          prim.center = {cx + rr * std::cos(a), cy + rr * std::sin(a),
                         prim.half.z()};
          ok = true;
          for (const auto& other : placed) {
            const double min_sep =
                footprint_radius(prim) + footprint_radius(other) + 0.1;
            if ((prim.center.head<2>() - other.center.head<2>()).norm() < min_sep) {
              ok = false;
              break;
            }
          }
        }
        if (ok) {
          placed.push_back(prim);
        }
      }
      world.primitives.insert(world.primitives.end(), placed.begin(), placed.end());
    }
  }

  for (const auto& prim : world.primitives) {
    sample_primitive(prim, rng, world.surface_points);
  }
  world.index = std::make_shared<KdTree>(world.surface_points);
  return world;
}

PointCloud simulate_scan(const SyntheticWorld& world, const Pose& pose,
                         double sensor_range, double noise_sigma,
                         std::uint64_t seed) {
  if (sensor_range <= 0.0) {
    throw InvalidInputError("simulate_scan: sensor_range must be positive");
  }
  PointCloud out;
  const auto hits = world.index->radius_query(pose.translation, sensor_range);
  out.points.reserve(hits.size());

  const Eigen::Matrix3d rt = pose.rotation.transpose();
  std::mt19937_64 rng(mix_seed(seed, 0x5CA9));
  std::normal_distribution<double> noise(0.0, noise_sigma);
  for (std::size_t i : hits) {
    const Point& wp = world.surface_points[i];
    Eigen::Vector3d p = rt * (wp.xyz() - pose.translation);
    if (noise_sigma > 0.0) {
      p += Eigen::Vector3d(noise(rng), noise(rng), noise(rng));
    }
    out.points.push_back(Point{p.x(), p.y(), p.z(), wp.intensity});
  }
  return out;
}

void TrajectorySpec::validate() const {
  if (waypoints.size() < 2) {
    throw ConfigError("trajectory: needs at least 2 waypoints");
  }
  if (speed <= 0.0 || scan_period <= 0.0) {
    throw ConfigError("trajectory: speed and scan_period must be positive");
  }
  if (label_radius <= 0.0 || label_min_time_gap < 0.0) {
    throw ConfigError("trajectory: bad label parameters");
  }
  if (pose_noise_translation < 0.0 || pose_noise_yaw_deg < 0.0) {
    throw ConfigError("trajectory: pose noise must be non-negative");
  }
}

std::vector<Pose> generate_trajectory(const TrajectorySpec& traj) {
  traj.validate();

  // cumulative arc length of the polyline
  std::vector<double> cum = {0.0};
  for (std::size_t i = 1; i < traj.waypoints.size(); ++i) {
    cum.push_back(cum.back() + (traj.waypoints[i] - traj.waypoints[i - 1]).norm());
  }
  const double total = cum.back();
  if (total <= 0.0) {
    throw ConfigError("trajectory: waypoints have zero total length");
  }

  std::vector<Pose> poses;
  const double step = traj.speed * traj.scan_period;
  std::size_t seg = 0;
  for (double s = 0.0; s <= total + 1e-9; s += step) {
    const double sc = std::min(s, total);
    while (seg + 2 < traj.waypoints.size() && cum[seg + 1] < sc) {
      ++seg;
    }
    const Eigen::Vector3d a = traj.waypoints[seg];
    const Eigen::Vector3d b = traj.waypoints[seg + 1];
    const double seg_len = cum[seg + 1] - cum[seg];
    const double t = seg_len > 0.0 ? (sc - cum[seg]) / seg_len : 0.0;

    Pose pose;
    pose.translation = a + t * (b - a);
    const Eigen::Vector3d dir = b - a;
    const double yaw = std::atan2(dir.y(), dir.x());
    pose.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
    pose.timestamp = static_cast<double>(poses.size()) * traj.scan_period;
    poses.push_back(pose);
  }

  const std::size_t base_count = poses.size();
  for (const auto& seg_spec : traj.revisits) {
    if (seg_spec.first > seg_spec.last || seg_spec.last >= base_count) {
      throw ConfigError("trajectory: revisit segment out of range");
    }
    std::vector<std::size_t> order;
    for (std::size_t i = seg_spec.first; i <= seg_spec.last; ++i) {
      order.push_back(i);
    }
    if (seg_spec.reversed) {
      std::reverse(order.begin(), order.end());
    }
    for (std::size_t i : order) {
      Pose pose = poses[i];
      if (seg_spec.reversed) {
        pose.rotation =
            (Eigen::AngleAxisd(std::numbers::pi, Eigen::Vector3d::UnitZ()) *
             pose.rotation)
                .eval();
      }
      pose.timestamp = static_cast<double>(poses.size()) * traj.scan_period;
      poses.push_back(pose);
    }
  }
  return poses;
}

SynthDataset generate_dataset(const SyntheticWorld& world, const TrajectorySpec& traj,
                              double sensor_range, double scan_noise_sigma,
                              std::uint64_t seed) {
  SynthDataset out;
  out.true_poses = generate_trajectory(traj);

  std::mt19937_64 pose_rng(mix_seed(seed, 0xA0DE));
  std::normal_distribution<double> tn(0.0, traj.pose_noise_translation);
  std::normal_distribution<double> yn(0.0,
                                      traj.pose_noise_yaw_deg * std::numbers::pi / 180.0);

  for (std::size_t i = 0; i < out.true_poses.size(); ++i) {
    const Pose& truth = out.true_poses[i];

    Sample s;
    s.cloud = simulate_scan(world, truth, sensor_range, scan_noise_sigma,
                            mix_seed(seed, i));
    s.pose = truth;
    if (traj.pose_noise_translation > 0.0) {
      s.pose.translation += Eigen::Vector3d(tn(pose_rng), tn(pose_rng), tn(pose_rng));
    }
    if (traj.pose_noise_yaw_deg > 0.0) {
      s.pose.rotation =
          (Eigen::AngleAxisd(yn(pose_rng), Eigen::Vector3d::UnitZ()) *
           s.pose.rotation)
              .eval();
    }
    s.timestamp = truth.timestamp;
    s.pose.timestamp = truth.timestamp;
    out.samples.push_back(std::move(s));
  }

  for (std::size_t q = 1; q < out.true_poses.size(); ++q) {
    for (std::size_t m = 0; m < q; ++m) {
      const double dist =
          (out.true_poses[q].translation - out.true_poses[m].translation).norm();
      const double dt = out.true_poses[q].timestamp - out.true_poses[m].timestamp;
      if (dist < traj.label_radius && dt >= traj.label_min_time_gap) {
        out.labels.emplace_back(q, m);
      }
    }
  }
  return out;
}

namespace {

std::string scan_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu.bin", i);
  return buf;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_dataset_dir(const std::string& dir, const SynthDataset& dataset) {
  fs::create_directories(fs::path(dir) / "scans");

  std::ofstream poses(fs::path(dir) / "poses.txt", std::ios::trunc);
  std::ofstream times(fs::path(dir) / "times.txt", std::ios::trunc);
  std::ofstream labels(fs::path(dir) / "labels.txt", std::ios::trunc);
  if (!poses || !times || !labels) {
    throw IoError("cannot create dataset files under " + dir);
  }

  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& s = dataset.samples[i];
    save_scan_bin((fs::path(dir) / "scans" / scan_name(i)).string(), s.cloud);

    const Eigen::Matrix3d& r = s.pose.rotation;
    const Eigen::Vector3d& t = s.pose.translation;
    for (int row = 0; row < 3; ++row) {
      poses << fmt17(r(row, 0)) << ' ' << fmt17(r(row, 1)) << ' '
            << fmt17(r(row, 2)) << ' ' << fmt17(t(row));
      poses << (row == 2 ? "" : " ");
    }
    poses << '\n';
    times << fmt17(s.timestamp) << '\n';
  }
  for (const auto& [q, m] : dataset.labels) {
    labels << q << ' ' << m << '\n';
  }
  if (!poses || !times || !labels) {
    throw IoError("write failure under " + dir);
  }
}

LoadedDataset load_dataset_dir(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::exists(root / "poses.txt")) {
    throw ValidationError("dataset directory missing poses.txt: " + dir);
  }

  LoadedDataset out;
  auto poses = load_pose_file((root / "poses.txt").string());
  if (fs::exists(root / "times.txt")) {
    const auto times = load_times_file((root / "times.txt").string());
    if (times.size() != poses.size()) {
      throw MalformedFileError("times.txt and poses.txt disagree in length: " + dir);
    }
    for (std::size_t i = 0; i < poses.size(); ++i) {
      poses[i].timestamp = times[i];
    }
  }

  for (std::size_t i = 0; i < poses.size(); ++i) {
    Sample s;
    s.cloud_path = (root / "scans" / scan_name(i)).string();
    if (!fs::exists(s.cloud_path)) {
      throw ValidationError("dataset scan missing: " + s.cloud_path);
    }
    s.pose = poses[i];
    s.timestamp = poses[i].timestamp;
    out.samples.push_back(std::move(s));
  }

  if (fs::exists(root / "labels.txt")) {
    std::ifstream in(root / "labels.txt");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) {
        continue;
      }
      std::istringstream iss(line);
      std::size_t q, m;
      if (!(iss >> q >> m) || q >= out.samples.size() || m >= q) {
        throw ParseError("labels.txt line " + std::to_string(line_no) +
                         " is invalid: " + dir);
      }
      out.labels.emplace_back(q, m);
    }
  }
  return out;
}

}  // namespace lpr
