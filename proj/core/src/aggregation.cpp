#include "lpr/aggregation.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace lpr {

PooledMatrix second_order_pool(const FeatureMap& fm) {
  const auto n = fm.features.rows();
  const auto d = fm.features.cols();
  if (n == 0 || d == 0) {
    throw InvalidInputError("second_order_pool: empty feature map");
  }
  if (!fm.features.allFinite()) {
    throw InvalidInputError("second_order_pool: non-finite features");
  }

  PooledMatrix out;
  out.values.resize(d, d);
  out.argmax.resize(d, d);

  // Both triangle entries are written from the same per-point product, so the
  // result is exactly symmetric.
  for (Eigen::Index x = 0; x < d; ++x) {
    for (Eigen::Index y = x; y < d; ++y) {
      double best = fm.features(0, x) * fm.features(0, y);
      std::size_t best_i = 0;
      for (Eigen::Index i = 1; i < n; ++i) {
        const double v = fm.features(i, x) * fm.features(i, y);
        if (v > best) {
          best = v;
          best_i = static_cast<std::size_t>(i);
        }
      }
      out.values(x, y) = best;
      out.values(y, x) = best;
      out.argmax(x, y) = best_i;
      out.argmax(y, x) = best_i;
    }
  }
  return out;
}

SvdResult svd_square(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) {
    throw InvalidInputError("svd_square: matrix must be square");
  }
  if (!m.allFinite()) {
    throw InvalidInputError("svd_square: non-finite entries");
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return {svd.matrixU(), svd.singularValues(), svd.matrixV()};
}

Eigen::MatrixXd epn(const Eigen::MatrixXd& pooled, double alpha) {
  if (alpha <= 0.0 || alpha > 1.0) {
    throw InvalidInputError("epn: alpha must be in (0, 1]");
  }
  const SvdResult svd = svd_square(pooled);
  const Eigen::VectorXd powered =
      svd.singular_values.array().pow(alpha).matrix();
  return svd.u * powered.asDiagonal() * svd.v.transpose();
}

GlobalDescriptor flatten_normalize(const Eigen::MatrixXd& m) {
  if (!m.allFinite()) {
    throw InvalidInputError("flatten_normalize: non-finite entries");
  }
  const auto d = m.rows();
  GlobalDescriptor g;
  g.values.resize(d * m.cols());
  // row-major flatten, fixed so descriptor files are portable
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      g.values(k++) = m(r, c);
    }
  }
  const double norm = g.values.norm();
  if (norm == 0.0) {
    g.degenerate = true;
    return g;
  }
  g.values /= norm;
  return g;
}

GlobalDescriptor aggregate(const FeatureMap& fm, double alpha) {
  const PooledMatrix pooled = second_order_pool(fm);
  return flatten_normalize(epn(pooled.values, alpha));
}

namespace {

constexpr double kGapClamp = 1e-6;    // cross-term denominator floor
constexpr double kSigmaClamp = 1e-12; // power-rule base floor

double clamp_signed(double v) {
  if (v >= 0.0) {
    return std::max(v, kGapClamp);
  }
  return std::min(v, -kGapClamp);
}

// Reverse-mode rule for M -> U diag(s^alpha) V^T evaluated via the SVD
// differential: dL/dM = U [ (F o (U^T Ub - Ub^T U)) S + S (F o (V^T Vb -
// Vb^T V)) + diag(sb) ] V^T with F_ij = 1 / (s_j^2 - s_i^2).
Eigen::MatrixXd svd_power_backward(const SvdResult& svd, double alpha,
                                   const Eigen::MatrixXd& grad_out) {
  const Eigen::Index d = svd.u.rows();
  const Eigen::VectorXd& s = svd.singular_values;
  const Eigen::VectorXd powered = s.array().pow(alpha).matrix();

  const Eigen::MatrixXd u_bar = grad_out * svd.v * powered.asDiagonal();
  const Eigen::MatrixXd v_bar = grad_out.transpose() * svd.u * powered.asDiagonal();

  Eigen::VectorXd s_bar(d);
  const Eigen::MatrixXd utgv = svd.u.transpose() * grad_out * svd.v;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double base = std::max(s(i), kSigmaClamp);
    s_bar(i) = alpha * std::pow(base, alpha - 1.0) * utgv(i, i);
  }

  const Eigen::MatrixXd ku = svd.u.transpose() * u_bar - u_bar.transpose() * svd.u;
  const Eigen::MatrixXd kv = svd.v.transpose() * v_bar - v_bar.transpose() * svd.v;

  Eigen::MatrixXd inner = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (i == j) {
        continue;
      }
      const double f = 1.0 / clamp_signed(s(j) * s(j) - s(i) * s(i));
      inner(i, j) = f * (ku(i, j) * s(j) + s(i) * kv(i, j));
    }
  }
  inner.diagonal() = s_bar;

  return svd.u * inner * svd.v.transpose();
}

}  // namespace

Eigen::MatrixXd epn_normalize_backward(const Eigen::MatrixXd& m,
                                       const Eigen::VectorXd& upstream,
                                       double alpha) {
  if (alpha <= 0.0 || alpha > 1.0) {
    throw InvalidInputError("epn_normalize_backward: alpha must be in (0, 1]");
  }
  const auto d = m.rows();
  if (upstream.size() != d * m.cols()) {
    throw InvalidInputError("epn_normalize_backward: upstream size mismatch");
  }

  const SvdResult svd = svd_square(m);
  const Eigen::VectorXd powered = svd.singular_values.array().pow(alpha).matrix();
  const Eigen::MatrixXd f_alpha = svd.u * powered.asDiagonal() * svd.v.transpose();

  // backward through flatten + L2 normalize
  Eigen::VectorXd flat(d * m.cols());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      flat(k++) = f_alpha(r, c);
    }
  }
  const double norm = flat.norm();
  Eigen::MatrixXd grad_f_alpha = Eigen::MatrixXd::Zero(d, m.cols());
  if (norm > 0.0) {
    const Eigen::VectorXd g = flat / norm;
    const Eigen::VectorXd grad_flat = (upstream - g * g.dot(upstream)) / norm;
    k = 0;
    for (Eigen::Index r = 0; r < d; ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        grad_f_alpha(r, c) = grad_flat(k++);
      }
    }
  }
  return svd_power_backward(svd, alpha, grad_f_alpha);
}

Eigen::MatrixXd aggregate_backward(const FeatureMap& fm,
                                   const Eigen::VectorXd& upstream,
                                   double alpha) {
  const PooledMatrix pooled = second_order_pool(fm);
  const Eigen::MatrixXd grad_pooled =
      epn_normalize_backward(pooled.values, upstream, alpha);

  const auto d = fm.features.cols();
  Eigen::MatrixXd grad_features =
      Eigen::MatrixXd::Zero(fm.features.rows(), d);
  // Route each element's gradient to its argmax point. Iterating both
  // triangles symmetrizes across (x, y) / (y, x) automatically.
  for (Eigen::Index x = 0; x < d; ++x) {
    for (Eigen::Index y = 0; y < d; ++y) {
      const auto i = static_cast<Eigen::Index>(pooled.argmax(x, y));
      const double g = grad_pooled(x, y);
      grad_features(i, x) += g * fm.features(i, y);
      grad_features(i, y) += g * fm.features(i, x);
    }
  }
  return grad_features;
}

void save_descriptors(const std::string& path,
                      const std::vector<DescriptorRecord>& records,
                      int feature_dim) {
  const Eigen::Index expect = static_cast<Eigen::Index>(feature_dim) * feature_dim;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open descriptor file for writing: " + path);
  }
  out << "LPRDESC 1 " << feature_dim << '\n';
  for (const auto& rec : records) {
    if (rec.descriptor.values.size() != expect) {
      throw InvalidInputError("save_descriptors: descriptor dimension mismatch");
    }
    out.write(reinterpret_cast<const char*>(&rec.timestamp), sizeof(double));
    Eigen::Matrix<double, 3, 3, Eigen::RowMajor> r = rec.pose.rotation;
    out.write(reinterpret_cast<const char*>(r.data()), 9 * sizeof(double));
    out.write(reinterpret_cast<const char*>(rec.pose.translation.data()),
              3 * sizeof(double));
    const std::uint8_t flag = rec.descriptor.degenerate ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&flag), 1);
    out.write(reinterpret_cast<const char*>(rec.descriptor.values.data()),
              static_cast<std::streamsize>(expect * sizeof(double)));
  }
  if (!out) {
    throw IoError("write failure on descriptor file: " + path);
  }
}

std::vector<DescriptorRecord> load_descriptors(const std::string& path,
                                               int* feature_dim_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open descriptor file: " + path);
  }
  std::string header;
  if (!std::getline(in, header)) {
    throw MalformedFileError("descriptor file has no header: " + path);
  }
  std::istringstream iss(header);
  std::string magic;
  int version = 0;
  int d = 0;
  iss >> magic >> version >> d;
  if (magic != "LPRDESC" || version != 1 || d < 1) {
    throw MalformedFileError("bad descriptor file header: " + path);
  }
  if (feature_dim_out != nullptr) {
    *feature_dim_out = d;
  }
  const std::size_t dd = static_cast<std::size_t>(d) * static_cast<std::size_t>(d);

  std::vector<DescriptorRecord> records;
  while (true) {
    DescriptorRecord rec;
    if (!in.read(reinterpret_cast<char*>(&rec.timestamp), sizeof(double))) {
      break;  // clean EOF
    }
    Eigen::Matrix<double, 3, 3, Eigen::RowMajor> r;
    if (!in.read(reinterpret_cast<char*>(r.data()), 9 * sizeof(double))) {
      throw MalformedFileError("descriptor file truncated: " + path);
    }
    rec.pose.rotation = r;
    if (!in.read(reinterpret_cast<char*>(rec.pose.translation.data()),
                 3 * sizeof(double))) {
      throw MalformedFileError("descriptor file truncated: " + path);
    }
    rec.pose.timestamp = rec.timestamp;
    std::uint8_t flag = 0;
    if (!in.read(reinterpret_cast<char*>(&flag), 1)) {
      throw MalformedFileError("descriptor file truncated: " + path);
    }
    rec.descriptor.degenerate = flag != 0;
    rec.descriptor.values.resize(static_cast<Eigen::Index>(dd));
    if (!in.read(reinterpret_cast<char*>(rec.descriptor.values.data()),
                 static_cast<std::streamsize>(dd * sizeof(double)))) {
      throw MalformedFileError("descriptor file truncated: " + path);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace lpr
