#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lpr/encoder.hpp"
#include "lpr/types.hpp"

namespace lpr {

// Element-wise maximum over the per-point outer products f f^T, together with
// the point index that attained each element's maximum (needed for the
// backward pass). Exactly symmetric by construction.
struct PooledMatrix {
  Eigen::MatrixXd values;                       // d x d
  Eigen::Matrix<std::size_t, Eigen::Dynamic, Eigen::Dynamic> argmax;  // d x d
};

// Flattened (row-major), L2-normalized pooled matrix. An all-zero pooled
// matrix yields the zero vector with `degenerate` set instead of an error,
// so untrained encoders can still run the full pipeline.
struct GlobalDescriptor {
  Eigen::VectorXd values;  // d*d
  bool degenerate = false;

  int dim() const { return static_cast<int>(values.size()); }
};

struct SvdResult {
  Eigen::MatrixXd u;
  Eigen::VectorXd singular_values;  // non-negative, descending
  Eigen::MatrixXd v;
};

// Ties between points are broken toward the lowest index. Throws
// InvalidInputError on an empty feature map.
PooledMatrix second_order_pool(const FeatureMap& fm);

// Full SVD of a square matrix, M = U diag(s) V^T.
SvdResult svd_square(const Eigen::MatrixXd& m);

// Spectral rebalancing: raises every singular value to the power alpha,
// 0 < alpha <= 1.
Eigen::MatrixXd epn(const Eigen::MatrixXd& pooled, double alpha);

GlobalDescriptor flatten_normalize(const Eigen::MatrixXd& m);

// The whole aggregation: pool, ePN, flatten + normalize.
GlobalDescriptor aggregate(const FeatureMap& fm, double alpha = 0.5);

// Gradient of <upstream, aggregate(fm)> with respect to the feature map.
// Near-equal singular values have their cross-term denominators clamped to a
// sign-preserving magnitude of at least 1e-6; singular values are clamped
// below at 1e-12 inside the power-rule term.
Eigen::MatrixXd aggregate_backward(const FeatureMap& fm,
                                   const Eigen::VectorXd& upstream,
                                   double alpha = 0.5);

// Gradient of <upstream, flatten_normalize(epn(m, alpha))> w.r.t. m; exposed
// for targeted testing of the SVD differential.
Eigen::MatrixXd epn_normalize_backward(const Eigen::MatrixXd& m,
                                       const Eigen::VectorXd& upstream,
                                       double alpha);

// Descriptor database record: one per scan.
struct DescriptorRecord {
  double timestamp = 0.0;
  Pose pose;
  GlobalDescriptor descriptor;
};

// Descriptor file: a one-line text header ("LPRDESC 1 <d>") followed by
// little-endian binary records (timestamp f64, rotation 9xf64 row-major,
// translation 3xf64, degenerate u8, descriptor d*d x f64).
void save_descriptors(const std::string& path,
                      const std::vector<DescriptorRecord>& records, int feature_dim);
std::vector<DescriptorRecord> load_descriptors(const std::string& path,
                                               int* feature_dim_out = nullptr);

}  // namespace lpr
