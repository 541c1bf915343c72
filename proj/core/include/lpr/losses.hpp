#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "lpr/aggregation.hpp"
#include "lpr/encoder.hpp"
#include "lpr/geometry.hpp"
#include "lpr/types.hpp"

namespace lpr {

struct LocalLossConfig {
  double positive_margin = 0.1;   // m_p
  double negative_margin = 2.0;   // m_n
  double negative_weight = 0.5;   // lambda_n
  std::size_t mining_size = 512;  // |M| per cloud

  void validate() const {
    if (positive_margin < 0.0 || negative_margin < 0.0) {
      throw ConfigError("local loss: margins must be non-negative");
    }
    if (negative_margin <= positive_margin) {
      throw ConfigError("local loss: negative margin must exceed positive margin");
    }
    if (mining_size == 0) {
      throw ConfigError("local loss: mining_size must be positive");
    }
  }
};

struct QuadrupletConfig {
  double alpha = 0.5;
  double beta = 0.3;
  int num_negatives = 9;
  int num_positives = 2;

  void validate() const {
    if (alpha < 0.0 || beta < 0.0) {
      throw ConfigError("quadruplet loss: margins must be non-negative");
    }
    if (num_negatives < 1 || num_positives < 1) {
      throw ConfigError("quadruplet loss: needs at least 1 positive and 1 negative");
    }
  }
};

struct JointConfig {
  double omega = 1.0;

  void validate() const {
    if (omega < 0.0) {
      throw ConfigError("joint loss: omega must be non-negative");
    }
  }
};

struct LocalLossResult {
  double loss = 0.0;
  Eigen::MatrixXd grad_f1;  // same shape as F1
  Eigen::MatrixXd grad_f2;
};

// Hardest-contrastive loss over a correspondence set: a positive hinge on
// each corresponding feature pair plus two mined-negative hinges, each
// normalized by its valid-mined count. Mined candidates whose minimizer lies
// geometrically within the correspondence radius of the query point are
// dropped via the indicator. `mined_2` indexes cloud 2 (negatives for cloud-1
// queries), `mined_1` indexes cloud 1.
LocalLossResult hardest_contrastive_loss_mined(
    const FeatureMap& f1, const FeatureMap& f2, const CorrespondenceSet& c12,
    const std::vector<std::size_t>& mined_1, const std::vector<std::size_t>& mined_2,
    const LocalLossConfig& cfg);

// Same, with the mining subsets drawn uniformly (without replacement, size
// min(mining_size, N)) from the opposite cloud; deterministic per seed.
LocalLossResult hardest_contrastive_loss(const FeatureMap& f1, const FeatureMap& f2,
                                         const CorrespondenceSet& c12,
                                         const LocalLossConfig& cfg,
                                         std::uint64_t rng_seed);

// Uniform sample of `count` distinct indices from [0, n), sorted ascending.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count,
                                        std::uint64_t rng_seed);

// Index of the positive farthest from the anchor (ties toward lowest index).
std::size_t hardest_positive(const GlobalDescriptor& anchor,
                             const std::vector<GlobalDescriptor>& positives);

struct QuadrupletResult {
  double loss = 0.0;
  std::size_t hardest_positive_index = 0;
  Eigen::VectorXd grad_anchor;
  std::vector<Eigen::VectorXd> grad_positives;  // zero except the hardest one
  std::vector<Eigen::VectorXd> grad_negatives;
  Eigen::VectorXd grad_other_negative;
};

// Two hinge terms per negative, squared L2 distances, hardest positive
// selected by hardest_positive() and treated as constant in the backward.
QuadrupletResult quadruplet_loss(const GlobalDescriptor& anchor,
                                 const std::vector<GlobalDescriptor>& positives,
                                 const std::vector<GlobalDescriptor>& negatives,
                                 const GlobalDescriptor& other_negative,
                                 const QuadrupletConfig& cfg);

// L = L_g + omega * L_lc, applied to both values and gradients.
double joint_loss_value(double lg, double llc, const JointConfig& cfg);
EncoderGrads joint_loss_grads(const EncoderGrads& lg_grads,
                              const EncoderGrads& llc_grads,
                              const JointConfig& cfg);

}  // namespace lpr
