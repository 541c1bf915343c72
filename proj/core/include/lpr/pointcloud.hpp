#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpr/types.hpp"

namespace lpr {

// Reads a raw LiDAR scan: consecutive little-endian float32 quadruples
// (x, y, z, intensity), widened to double. Throws MalformedFileError if the
// byte length is not a multiple of 16.
PointCloud load_scan_bin(const std::string& path);

// Writes a scan in the same binary layout (float32 x4 per point).
void save_scan_bin(const std::string& path, const PointCloud& cloud);

// Parses a pose file: one 3x4 row-major rigid transform per text line
// (12 whitespace-separated reals). Rotations that drifted from orthonormality
// by more than 1e-6 are re-projected onto SO(3). Timestamps are assigned as
// line index * timestamp_period; callers with a times file overwrite them.
std::vector<Pose> load_pose_file(const std::string& path,
                                 double timestamp_period = 0.1);

// One timestamp (seconds) per line.
std::vector<double> load_times_file(const std::string& path);

// Grid filter: one centroid (intensity averaged) per occupied voxel of edge
// voxel_size. Output order follows first occupancy of each voxel.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size);

// RANSAC plane removal. Fits the largest-consensus plane over max_iters
// 3-point hypotheses and removes its inliers, but only when the plane normal
// is within 30 degrees of vertical; otherwise the cloud is returned
// unchanged. Clouds with fewer than 3 points pass through unchanged.
PointCloud remove_ground_ransac(const PointCloud& cloud, double dist_thresh,
                                int max_iters, std::uint64_t rng_seed);

// Uniform subsample without replacement down to max_n points (input order
// preserved); identity when the cloud is already small enough.
PointCloud cap_points(const PointCloud& cloud, std::size_t max_n,
                      std::uint64_t rng_seed);

// Adds per-axis Gaussian noise N(0, sigma) clamped to [-clip, clip] to every
// point; intensity untouched.
PointCloud augment_jitter(const PointCloud& cloud, double sigma, double clip,
                          std::uint64_t rng_seed);

// Rotates all points about the origin z-axis.
PointCloud augment_rotate_z(const PointCloud& cloud, double angle);

}  // namespace lpr
