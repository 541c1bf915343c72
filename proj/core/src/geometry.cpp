#include "lpr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace lpr {

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t) {
  PointCloud out = cloud;
  for (auto& p : out.points) {
    const Eigen::Vector3d q = t.apply(p.xyz());
    p.x = q.x();
    p.y = q.y();
    p.z = q.z();
  }
  return out;
}

KdTree::KdTree(const PointCloud& cloud) {
  points_.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    points_.push_back(p.xyz());
  }
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  nodes_.reserve(points_.size());
  if (!points_.empty()) {
    root_ = build(0, points_.size(), 0);
  }
  order_.clear();
  order_.shrink_to_fit();
}

KdTree::KdTree(std::vector<Eigen::Vector3d> points) : points_(std::move(points)) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  nodes_.reserve(points_.size());
  if (!points_.empty()) {
    root_ = build(0, points_.size(), 0);
  }
  order_.clear();
  order_.shrink_to_fit();
}

std::int32_t KdTree::build(std::size_t begin, std::size_t end, int depth) {
  if (begin >= end) {
    return -1;
  }
  const int axis = depth % 3;
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) {
                     const double ca = points_[a][axis];
                     const double cb = points_[b][axis];
                     return ca < cb || (ca == cb && a < b);
                   });

  Node node;
  node.axis = axis;
  node.point = order_[mid];
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(node);
  const std::int32_t left = build(begin, mid, depth + 1);
  const std::int32_t right = build(mid + 1, end, depth + 1);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

std::vector<std::size_t> KdTree::radius_query(const Eigen::Vector3d& center,
                                              double r) const {
  if (r <= 0.0) {
    throw InvalidInputError("radius_query: r must be positive");
  }
  std::vector<std::size_t> hits;
  if (root_ < 0) {
    return hits;
  }
  const double r2 = r * r;

  std::vector<std::int32_t> stack = {root_};
  while (!stack.empty()) {
    const Node& node = nodes_[static_cast<std::size_t>(stack.back())];
    stack.pop_back();

    const Eigen::Vector3d& p = points_[node.point];
    if ((p - center).squaredNorm() < r2) {
      hits.push_back(node.point);
    }
    const double delta = center[node.axis] - p[node.axis];
    if (node.left >= 0 && (delta < 0.0 || delta * delta < r2)) {
      stack.push_back(node.left);
    }
    if (node.right >= 0 && (delta > 0.0 || delta * delta < r2)) {
      stack.push_back(node.right);
    }
  }
  std::sort(hits.begin(), hits.end());
  return hits;
}

std::optional<std::size_t> KdTree::nearest(const Eigen::Vector3d& query) const {
  if (root_ < 0) {
    return std::nullopt;
  }
  std::size_t best = points_.size();
  double best_d2 = std::numeric_limits<double>::infinity();

  // Depth-first with pruning; on exact distance ties the lower index wins,
  // so subtrees at exactly the best distance are still visited.
  std::vector<std::int32_t> stack = {root_};
  while (!stack.empty()) {
    const Node& node = nodes_[static_cast<std::size_t>(stack.back())];
    stack.pop_back();

    const Eigen::Vector3d& p = points_[node.point];
    const double d2 = (p - query).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && node.point < best)) {
      best_d2 = d2;
      best = node.point;
    }
    const double delta = query[node.axis] - p[node.axis];
    const std::int32_t near = delta <= 0.0 ? node.left : node.right;
    const std::int32_t far = delta <= 0.0 ? node.right : node.left;
    if (far >= 0 && delta * delta <= best_d2) {
      stack.push_back(far);
    }
    if (near >= 0) {
      stack.push_back(near);
    }
  }
  return best;
}

std::vector<std::size_t> KdTree::knn(const Eigen::Vector3d& query,
                                     std::size_t k) const {
  if (k == 0 || points_.empty()) {
    return {};
  }
  using Entry = std::pair<double, std::size_t>;  // (squared distance, index)
  std::vector<Entry> heap;                       // max-heap on Entry ordering
  heap.reserve(k + 1);

  std::vector<std::int32_t> stack;
  if (root_ >= 0) {
    stack.push_back(root_);
  }
  while (!stack.empty()) {
    const Node& node = nodes_[static_cast<std::size_t>(stack.back())];
    stack.pop_back();

    const Eigen::Vector3d& p = points_[node.point];
    const Entry cand{(p - query).squaredNorm(), node.point};
    if (heap.size() < k) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end());
    } else if (cand < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end());
    }

    const double delta = query[node.axis] - p[node.axis];
    const std::int32_t near = delta <= 0.0 ? node.left : node.right;
    const std::int32_t far = delta <= 0.0 ? node.right : node.left;
    const bool full = heap.size() == k;
    if (far >= 0 && (!full || delta * delta <= heap.front().first)) {
      stack.push_back(far);
    }
    if (near >= 0) {
      stack.push_back(near);
    }
  }

  std::sort(heap.begin(), heap.end());
  std::vector<std::size_t> out;
  out.reserve(heap.size());
  for (const auto& [d2, idx] : heap) {
    out.push_back(idx);
  }
  return out;
}

namespace {

struct Pairing {
  std::vector<Eigen::Vector3d> src;
  std::vector<Eigen::Vector3d> tgt;
};

// Closed-form least-squares rigid alignment of paired points.
RigidTransform solve_rigid(const Pairing& pairs) {
  const std::size_t n = pairs.src.size();
  Eigen::Vector3d c_src = Eigen::Vector3d::Zero();
  Eigen::Vector3d c_tgt = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    c_src += pairs.src[i];
    c_tgt += pairs.tgt[i];
  }
  c_src /= static_cast<double>(n);
  c_tgt /= static_cast<double>(n);

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    h += (pairs.src[i] - c_src) * (pairs.tgt[i] - c_tgt).transpose();
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (sv(1) <= 1e-9 * std::max(sv(0), 1e-30)) {
    throw DegenerateGeometryError(
        "icp: cross-covariance is rank-deficient (collinear geometry)");
  }

  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  RigidTransform t;
  t.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  t.translation = c_tgt - t.rotation * c_src;
  return t;
}

}  // namespace

RigidTransform icp_point_to_point(const PointCloud& src, const PointCloud& tgt,
                                  const RigidTransform& init, int max_iter,
                                  double tol) {
  if (src.empty() || tgt.empty()) {
    throw InvalidInputError("icp: both clouds must be non-empty");
  }
  constexpr double kRejectDist = 2.0;  // pairs beyond this are outliers

  const KdTree tree(tgt);
  RigidTransform current = init;
  double prev_residual = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < max_iter; ++iter) {
    Pairing pairs;
    pairs.src.reserve(src.size());
    pairs.tgt.reserve(src.size());
    for (const auto& p : src.points) {
      const Eigen::Vector3d moved = current.apply(p.xyz());
      const auto nn = tree.nearest(moved);
      const Eigen::Vector3d q = tgt[*nn].xyz();
      if ((moved - q).norm() <= kRejectDist) {
        pairs.src.push_back(p.xyz());
        pairs.tgt.push_back(q);
      }
    }
    if (pairs.src.size() < 3) {
      throw DegenerateGeometryError("icp: fewer than 3 usable pairs");
    }

    current = solve_rigid(pairs);

    double residual = 0.0;
    for (std::size_t i = 0; i < pairs.src.size(); ++i) {
      residual += (current.apply(pairs.src[i]) - pairs.tgt[i]).norm();
    }
    residual /= static_cast<double>(pairs.src.size());

    if (prev_residual - residual < tol) {
      break;
    }
    prev_residual = residual;
  }
  return current;
}

CorrespondenceSet find_correspondences(const PointCloud& p1, const PointCloud& p2,
                                       const Pose& t1, const Pose& t2,
                                       double radius, bool use_icp) {
  if (radius <= 0.0) {
    throw InvalidInputError("find_correspondences: radius must be positive");
  }

  PointCloud w1 = apply_transform(p1, RigidTransform::from_pose(t1));
  const PointCloud w2 = apply_transform(p2, RigidTransform::from_pose(t2));

  if (use_icp && !w1.empty() && !w2.empty()) {
    const RigidTransform refine =
        icp_point_to_point(w1, w2, RigidTransform::identity(), 30, 1e-6);
    w1 = apply_transform(w1, refine);
  }

  CorrespondenceSet out;
  out.radius = radius;
  out.aligned_p1.reserve(w1.size());
  for (const auto& p : w1.points) {
    out.aligned_p1.push_back(p.xyz());
  }
  out.aligned_p2.reserve(w2.size());
  for (const auto& p : w2.points) {
    out.aligned_p2.push_back(p.xyz());
  }

  if (w1.empty() || w2.empty()) {
    return out;
  }
  const KdTree tree(w2);
  for (std::size_t i = 0; i < out.aligned_p1.size(); ++i) {
    for (std::size_t j : tree.radius_query(out.aligned_p1[i], radius)) {
      out.pairs.emplace_back(i, j);
    }
  }
  // radius_query returns ascending j and i grows monotonically, so `pairs`
  // is already sorted by (i, j).
  return out;
}

CorrespondenceSet sample_correspondences(const CorrespondenceSet& c12,
                                         std::size_t n, std::uint64_t rng_seed) {
  if (n == 0) {
    throw InvalidInputError("sample_correspondences: n must be positive");
  }
  CorrespondenceSet out;
  out.radius = c12.radius;
  out.aligned_p1 = c12.aligned_p1;
  out.aligned_p2 = c12.aligned_p2;

  if (c12.pairs.size() <= n) {
    out.pairs = c12.pairs;
    return out;
  }

  std::vector<std::size_t> idx(c12.pairs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(rng_seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());

  out.pairs.reserve(n);
  for (std::size_t i : idx) {
    out.pairs.push_back(c12.pairs[i]);
  }
  return out;
}

}  // namespace lpr
