#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lpr/geometry.hpp"
#include "lpr/sample.hpp"
#include "lpr/types.hpp"

namespace lpr {

enum class PrimitiveKind { Box, Cylinder, Wall, Ground };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Box;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  // box: half extents; cylinder: (radius, radius, half height);
  // wall: (half length, 0, half height); ground: (half x, half y, 0)
  Eigen::Vector3d half = Eigen::Vector3d::Zero();
  double yaw = 0.0;
  double intensity = 0.0;
  double density = 0.0;  // surface points per square metre
};

struct WorldConfig {
  double extent = 120.0;  // landmarks live in [0, extent]^2
  int num_clusters = 24;
  int min_primitives_per_cluster = 2;
  int max_primitives_per_cluster = 5;
  double cluster_spread = 4.0;
  bool boxes = true;
  bool cylinders = true;
  bool walls = true;
  bool ground = true;
  double ground_density = 0.15;  // points per m^2
  double density_scale = 1.0;    // scales the per-class surface densities

  void validate() const;
};

// A fixed set of primitives with their pre-sampled surface points, plus a
// spatial index for range queries. Immutable once generated; regeneration
// from the same (config, seed) is bitwise identical.
struct SyntheticWorld {
  std::vector<Primitive> primitives;
  PointCloud surface_points;  // world frame
  std::shared_ptr<const KdTree> index;
  std::uint64_t seed = 0;
};

SyntheticWorld generate_world(const WorldConfig& config, std::uint64_t seed);

// All world surface points within sensor_range of the pose, expressed in the
// sensor frame, with optional per-axis Gaussian position noise.
PointCloud simulate_scan(const SyntheticWorld& world, const Pose& pose,
                         double sensor_range, double noise_sigma,
                         std::uint64_t seed);

// A later stretch of the trajectory that retraces base scans [first, last].
struct RevisitSegment {
  std::size_t first = 0;
  std::size_t last = 0;
  bool reversed = false;
};

struct TrajectorySpec {
  std::vector<Eigen::Vector3d> waypoints;  // includes sensor height in z
  double speed = 2.0;                      // m/s
  double scan_period = 0.5;                // s
  std::vector<RevisitSegment> revisits;
  double pose_noise_translation = 0.0;  // m, per-axis Gaussian
  double pose_noise_yaw_deg = 0.0;
  double label_radius = 3.0;        // true-pose distance for revisit labels
  double label_min_time_gap = 30.0; // s; excludes trivially adjacent scans

  void validate() const;
};

// Scan poses along the waypoint polyline (yaw follows travel direction),
// followed by the requested revisit retraces.
std::vector<Pose> generate_trajectory(const TrajectorySpec& traj);

struct SynthDataset {
  std::vector<Sample> samples;  // in-memory scans, possibly noisy poses
  std::vector<std::pair<std::size_t, std::size_t>> labels;  // (query, match), query > match
  std::vector<Pose> true_poses;
};

// Simulates one scan per trajectory pose. Sample poses carry the configured
// pose noise; revisit labels are computed from the true poses.
SynthDataset generate_dataset(const SyntheticWorld& world, const TrajectorySpec& traj,
                              double sensor_range, double scan_noise_sigma,
                              std::uint64_t seed);

// On-disk layout: scans/NNNNNN.bin (float32 x4), poses.txt (12 reals/line),
// times.txt, labels.txt ("query match" per line).
void write_dataset_dir(const std::string& dir, const SynthDataset& dataset);

struct LoadedDataset {
  std::vector<Sample> samples;  // cloud_path set, clouds not loaded
  std::vector<std::pair<std::size_t, std::size_t>> labels;
};

LoadedDataset load_dataset_dir(const std::string& dir);

}  // namespace lpr
