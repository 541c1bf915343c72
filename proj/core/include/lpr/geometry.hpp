#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lpr/types.hpp"

namespace lpr {

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_pose(const Pose& p) { return {p.rotation, p.translation}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }
  RigidTransform inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }
  // this ∘ other: applies `other` first.
  RigidTransform compose(const RigidTransform& other) const {
    RigidTransform out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }
};

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t);

// Exact 3D KD-tree over a fixed point set; immutable after construction.
// Radius queries return precisely the brute-force result set, and nearest()
// breaks distance ties toward the lowest index.
class KdTree {
 public:
  explicit KdTree(const PointCloud& cloud);
  explicit KdTree(std::vector<Eigen::Vector3d> points);

  std::size_t size() const { return points_.size(); }

  // Indices of all points with Euclidean distance < r, ascending.
  std::vector<std::size_t> radius_query(const Eigen::Vector3d& center, double r) const;

  // Index of the closest point, or nullopt for an empty tree.
  std::optional<std::size_t> nearest(const Eigen::Vector3d& query) const;

  // Indices of the k closest points (all, if fewer exist), ordered by
  // (distance, index).
  std::vector<std::size_t> knn(const Eigen::Vector3d& query, std::size_t k) const;

 private:
  struct Node {
    int axis = -1;           // -1 marks a leaf entry
    std::size_t point = 0;   // index into points_
    std::int32_t left = -1;
    std::int32_t right = -1;
  };

  std::int32_t build(std::size_t begin, std::size_t end, int depth);

  std::vector<Eigen::Vector3d> points_;
  std::vector<std::size_t> order_;  // scratch during build
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
};

// Index pairs (i, j) between two clouds whose aligned positions are closer
// than `radius`. The aligned coordinates are kept so downstream consumers can
// re-check geometric proximity (e.g. negative-mining validity).
struct CorrespondenceSet {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double radius = 0.0;
  std::vector<Eigen::Vector3d> aligned_p1;
  std::vector<Eigen::Vector3d> aligned_p2;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

// Point-to-point ICP: alternates nearest-neighbor pairing against `tgt` with
// the closed-form SVD alignment, starting from `init`. Pairs further than
// 2 m apart are dropped each iteration. Stops when the mean residual improves
// by less than `tol` or after max_iter rounds. Throws DegenerateGeometryError
// when the paired points are collinear (rank-deficient cross-covariance).
RigidTransform icp_point_to_point(const PointCloud& src, const PointCloud& tgt,
                                  const RigidTransform& init, int max_iter,
                                  double tol);

// Builds the correspondence set between two posed clouds: both are moved to
// the world frame via their poses, optionally refined by ICP, then every
// pair within `radius` is emitted (sorted by (i, j)).
CorrespondenceSet find_correspondences(const PointCloud& p1, const PointCloud& p2,
                                       const Pose& t1, const Pose& t2,
                                       double radius, bool use_icp);

// Uniform subsample of at most n pairs, deterministic per seed; aligned
// coordinates are carried over untouched.
CorrespondenceSet sample_correspondences(const CorrespondenceSet& c12,
                                         std::size_t n, std::uint64_t rng_seed);

}  // namespace lpr
