#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lpr/types.hpp"

namespace lpr {

// Per-point embeddings, one row per input point (N x d).
struct FeatureMap {
  Eigen::MatrixXd features;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }
};

// Raw per-point input vector fed to the MLP: position, intensity, and
// k-nearest-neighbor shape statistics.
struct PointDescriptorInput {
  // x, y, z, intensity, centroid offset (3), covariance trace, mean distance
  std::array<double, 9> values{};
};

inline constexpr int kEncoderInputDim = 9;
inline constexpr int kEncoderHiddenDim = 32;

// Weights of the reference per-point MLP (9 -> 32 -> 32 -> d, ReLU hidden
// layers, linear output) plus the input-construction settings.
struct EncoderParams {
  int feature_dim = 16;
  int neighborhood_k = 16;
  bool normalize_intensity = true;
  std::vector<Eigen::MatrixXd> weights;  // [32x9, 32x32, dx32]
  std::vector<Eigen::VectorXd> biases;   // [32, 32, d]

  std::vector<int> layer_sizes() const {
    return {kEncoderInputDim, kEncoderHiddenDim, kEncoderHiddenDim, feature_dim};
  }
  std::size_t parameter_count() const;
};

// Gradients shaped exactly like EncoderParams.
struct EncoderGrads {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static EncoderGrads zeros_like(const EncoderParams& p);
  void add_scaled(const EncoderGrads& other, double scale);
  void scale(double s);
};

// Glorot-uniform weights, zero biases; deterministic per seed.
EncoderParams init_encoder_params(int feature_dim, int neighborhood_k,
                                  std::uint64_t seed);

// Throws ConfigError if the weight/bias shapes disagree with the declared
// architecture or contain non-finite values.
void validate_params(const EncoderParams& params);

// Computes the 9-dimensional raw input per point. Neighborhoods are the k
// nearest other points (all of them when the cloud has at most k+1 points).
std::vector<PointDescriptorInput> build_inputs(const PointCloud& cloud, int k,
                                               bool normalize_intensity = true);

// Runs the MLP over every point. Deterministic; permutation-equivariant.
FeatureMap encode(const PointCloud& cloud, const EncoderParams& params);

// MLP over precomputed inputs (the heavy lifting behind encode()).
FeatureMap encode_inputs(const std::vector<PointDescriptorInput>& inputs,
                         const EncoderParams& params);

// Exact reverse-mode gradient of <upstream, encode(cloud, params)> with
// respect to the parameters. ReLU subgradient at 0 is taken as 0.
EncoderGrads encode_backward(const PointCloud& cloud, const EncoderParams& params,
                             const Eigen::MatrixXd& upstream);

EncoderGrads encode_inputs_backward(const std::vector<PointDescriptorInput>& inputs,
                                    const EncoderParams& params,
                                    const Eigen::MatrixXd& upstream);

// Checkpoint container: text header (architecture, k, step/epoch counters,
// optional Adam moments) followed by little-endian float64 blobs.
struct Checkpoint {
  EncoderParams params;
  std::uint64_t step = 0;
  int epoch = 0;
  bool has_adam = false;
  std::vector<Eigen::MatrixXd> adam_m_w, adam_v_w;
  std::vector<Eigen::VectorXd> adam_m_b, adam_v_b;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lpr
