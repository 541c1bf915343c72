#include "lpr/encoder.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "lpr/geometry.hpp"

namespace lpr {

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) {
    n += static_cast<std::size_t>(w.size());
  }
  for (const auto& b : biases) {
    n += static_cast<std::size_t>(b.size());
  }
  return n;
}

EncoderGrads EncoderGrads::zeros_like(const EncoderParams& p) {
  EncoderGrads g;
  for (const auto& w : p.weights) {
    g.weights.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  }
  for (const auto& b : p.biases) {
    g.biases.push_back(Eigen::VectorXd::Zero(b.size()));
  }
  return g;
}

void EncoderGrads::add_scaled(const EncoderGrads& other, double scale) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] += scale * other.weights[i];
  }
  for (std::size_t i = 0; i < biases.size(); ++i) {
    biases[i] += scale * other.biases[i];
  }
}

void EncoderGrads::scale(double s) {
  for (auto& w : weights) {
    w *= s;
  }
  for (auto& b : biases) {
    b *= s;
  }
}

EncoderParams init_encoder_params(int feature_dim, int neighborhood_k,
                                  std::uint64_t seed) {
  if (feature_dim < 1 || neighborhood_k < 1) {
    throw ConfigError("encoder: feature_dim and k must be positive");
  }
  EncoderParams p;
  p.feature_dim = feature_dim;
  p.neighborhood_k = neighborhood_k;

  std::mt19937_64 rng(seed);
  const auto sizes = p.layer_sizes();
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l];
    const int fan_out = sizes[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) {
        w(r, c) = u(rng);
      }
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return p;
}

void validate_params(const EncoderParams& params) {
  const auto sizes = params.layer_sizes();
  if (params.weights.size() != sizes.size() - 1 ||
      params.biases.size() != sizes.size() - 1) {
    throw ConfigError("encoder params: wrong number of layers");
  }
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    if (params.weights[l].rows() != sizes[l + 1] ||
        params.weights[l].cols() != sizes[l] ||
        params.biases[l].size() != sizes[l + 1]) {
      throw ConfigError("encoder params: layer " + std::to_string(l) +
                        " has inconsistent shape");
    }
    if (!params.weights[l].allFinite() || !params.biases[l].allFinite()) {
      throw ConfigError("encoder params: non-finite entries in layer " +
                        std::to_string(l));
    }
  }
}

std::vector<PointDescriptorInput> build_inputs(const PointCloud& cloud, int k,
                                               bool normalize_intensity) {
  if (k < 1) {
    throw InvalidInputError("build_inputs: k must be >= 1");
  }
  if (cloud.empty()) {
    throw InvalidInputError("build_inputs: empty cloud");
  }
  const std::size_t n = cloud.size();

  double imin = std::numeric_limits<double>::infinity();
  double imax = -std::numeric_limits<double>::infinity();
  for (const auto& p : cloud.points) {
    imin = std::min(imin, p.intensity);
    imax = std::max(imax, p.intensity);
  }
  const double irange = imax - imin;

  const KdTree tree(cloud);
  std::vector<PointDescriptorInput> inputs(n);

  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p = cloud[i].xyz();
    // Ask for one extra neighbor so that dropping `i` itself still leaves k.
    auto nn = tree.knn(p, static_cast<std::size_t>(k) + 1);
    std::erase(nn, i);
    if (nn.size() > static_cast<std::size_t>(k)) {
      nn.resize(static_cast<std::size_t>(k));
    }

    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    double mean_dist = 0.0;
    for (std::size_t j : nn) {
      centroid += cloud[j].xyz();
      mean_dist += (cloud[j].xyz() - p).norm();
    }
    double cov_trace = 0.0;
    if (!nn.empty()) {
      const double inv = 1.0 / static_cast<double>(nn.size());
      centroid *= inv;
      mean_dist *= inv;
      for (std::size_t j : nn) {
        cov_trace += (cloud[j].xyz() - centroid).squaredNorm();
      }
      cov_trace *= inv;
    }

    const double intensity =
        normalize_intensity
            ? (irange > 0.0 ? (cloud[i].intensity - imin) / irange : 0.0)
            : cloud[i].intensity;
    const Eigen::Vector3d offset = nn.empty() ? Eigen::Vector3d::Zero().eval()
                                              : (centroid - p).eval();
    inputs[i].values = {p.x(),      p.y(),      p.z(),      intensity,
                        offset.x(), offset.y(), offset.z(), cov_trace,
                        mean_dist};
  }
  return inputs;
}

FeatureMap encode_inputs(const std::vector<PointDescriptorInput>& inputs,
                         const EncoderParams& params) {
  validate_params(params);
  const std::size_t n = inputs.size();
  const int d = params.feature_dim;

  FeatureMap fm;
  fm.features.resize(static_cast<Eigen::Index>(n), d);

  Eigen::VectorXd a(kEncoderInputDim);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < kEncoderInputDim; ++c) {
      a(c) = inputs[i].values[static_cast<std::size_t>(c)];
    }
    Eigen::VectorXd h1 = (params.weights[0] * a + params.biases[0]).cwiseMax(0.0);
    Eigen::VectorXd h2 = (params.weights[1] * h1 + params.biases[1]).cwiseMax(0.0);
    fm.features.row(static_cast<Eigen::Index>(i)) =
        (params.weights[2] * h2 + params.biases[2]).transpose();
  }
  return fm;
}

FeatureMap encode(const PointCloud& cloud, const EncoderParams& params) {
  return encode_inputs(
      build_inputs(cloud, params.neighborhood_k, params.normalize_intensity),
      params);
}

EncoderGrads encode_inputs_backward(const std::vector<PointDescriptorInput>& inputs,
                                    const EncoderParams& params,
                                    const Eigen::MatrixXd& upstream) {
  validate_params(params);
  if (upstream.rows() != static_cast<Eigen::Index>(inputs.size()) ||
      upstream.cols() != params.feature_dim) {
    throw InvalidInputError("encode_backward: upstream shape mismatch");
  }

  EncoderGrads g = EncoderGrads::zeros_like(params);
  Eigen::VectorXd a(kEncoderInputDim);

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (int c = 0; c < kEncoderInputDim; ++c) {
      a(c) = inputs[i].values[static_cast<std::size_t>(c)];
    }
    const Eigen::VectorXd z1 = params.weights[0] * a + params.biases[0];
    const Eigen::VectorXd h1 = z1.cwiseMax(0.0);
    const Eigen::VectorXd z2 = params.weights[1] * h1 + params.biases[1];
    const Eigen::VectorXd h2 = z2.cwiseMax(0.0);

    const Eigen::VectorXd d3 = upstream.row(static_cast<Eigen::Index>(i)).transpose();
    g.weights[2] += d3 * h2.transpose();
    g.biases[2] += d3;

    Eigen::VectorXd d2 = params.weights[2].transpose() * d3;
    d2 = (z2.array() > 0.0).select(d2, 0.0);
    g.weights[1] += d2 * h1.transpose();
    g.biases[1] += d2;

    Eigen::VectorXd d1 = params.weights[1].transpose() * d2;
    d1 = (z1.array() > 0.0).select(d1, 0.0);
    g.weights[0] += d1 * a.transpose();
    g.biases[0] += d1;
  }
  return g;
}

EncoderGrads encode_backward(const PointCloud& cloud, const EncoderParams& params,
                             const Eigen::MatrixXd& upstream) {
  return encode_inputs_backward(
      build_inputs(cloud, params.neighborhood_k, params.normalize_intensity),
      params, upstream);
}

namespace {

void write_blob(std::ofstream& out, const double* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
}

void read_blob(std::ifstream& in, double* data, std::size_t count,
               const std::string& path) {
  if (!in.read(reinterpret_cast<char*>(data),
               static_cast<std::streamsize>(count * sizeof(double)))) {
    throw MalformedFileError("checkpoint truncated: " + path);
  }
}

void write_tensors(std::ofstream& out, const std::vector<Eigen::MatrixXd>& ws,
                   const std::vector<Eigen::VectorXd>& bs) {
  for (std::size_t l = 0; l < ws.size(); ++l) {
    // row-major on disk
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
        wr = ws[l];
    write_blob(out, wr.data(), static_cast<std::size_t>(wr.size()));
    write_blob(out, bs[l].data(), static_cast<std::size_t>(bs[l].size()));
  }
}

void read_tensors(std::ifstream& in, const std::vector<int>& sizes,
                  std::vector<Eigen::MatrixXd>& ws, std::vector<Eigen::VectorXd>& bs,
                  const std::string& path) {
  ws.clear();
  bs.clear();
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> wr(
        sizes[l + 1], sizes[l]);
    read_blob(in, wr.data(), static_cast<std::size_t>(wr.size()), path);
    Eigen::VectorXd b(sizes[l + 1]);
    read_blob(in, b.data(), static_cast<std::size_t>(b.size()), path);
    ws.emplace_back(wr);
    bs.push_back(std::move(b));
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  validate_params(ckpt.params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open checkpoint for writing: " + path);
  }
  const auto sizes = ckpt.params.layer_sizes();
  out << "LPRCKPT 1\n";
  out << "dims";
  for (int s : sizes) {
    out << ' ' << s;
  }
  out << '\n';
  out << "k " << ckpt.params.neighborhood_k << '\n';
  out << "normalize_intensity " << (ckpt.params.normalize_intensity ? 1 : 0) << '\n';
  out << "step " << ckpt.step << '\n';
  out << "epoch " << ckpt.epoch << '\n';
  out << "adam " << (ckpt.has_adam ? 1 : 0) << '\n';
  out << "---\n";

  write_tensors(out, ckpt.params.weights, ckpt.params.biases);
  if (ckpt.has_adam) {
    write_tensors(out, ckpt.adam_m_w, ckpt.adam_m_b);
    write_tensors(out, ckpt.adam_v_w, ckpt.adam_v_b);
  }
  if (!out) {
    throw IoError("write failure on checkpoint: " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open checkpoint: " + path);
  }
  std::string line;
  if (!std::getline(in, line) || line != "LPRCKPT 1") {
    throw MalformedFileError("not a checkpoint file (bad magic): " + path);
  }

  Checkpoint ckpt;
  std::vector<int> sizes;
  while (std::getline(in, line)) {
    if (line == "---") {
      break;
    }
    std::istringstream iss(line);
    std::string key;
    iss >> key;
    if (key == "dims") {
      int v;
      while (iss >> v) {
        sizes.push_back(v);
      }
    } else if (key == "k") {
      iss >> ckpt.params.neighborhood_k;
    } else if (key == "normalize_intensity") {
      int v = 1;
      iss >> v;
      ckpt.params.normalize_intensity = v != 0;
    } else if (key == "step") {
      iss >> ckpt.step;
    } else if (key == "epoch") {
      iss >> ckpt.epoch;
    } else if (key == "adam") {
      int v = 0;
      iss >> v;
      ckpt.has_adam = v != 0;
    } else {
      throw MalformedFileError("checkpoint: unknown header key '" + key +
                               "': " + path);
    }
  }
  if (sizes.size() != 4 || sizes[0] != kEncoderInputDim ||
      sizes[1] != kEncoderHiddenDim || sizes[2] != kEncoderHiddenDim ||
      sizes[3] < 1) {
    throw MalformedFileError("checkpoint: unsupported architecture: " + path);
  }
  ckpt.params.feature_dim = sizes[3];

  read_tensors(in, sizes, ckpt.params.weights, ckpt.params.biases, path);
  if (ckpt.has_adam) {
    read_tensors(in, sizes, ckpt.adam_m_w, ckpt.adam_m_b, path);
    read_tensors(in, sizes, ckpt.adam_v_w, ckpt.adam_v_b, path);
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw MalformedFileError("checkpoint: trailing bytes: " + path);
  }
  validate_params(ckpt.params);
  return ckpt;
}

}  // namespace lpr
