#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lpr/encoder.hpp"
#include "lpr/losses.hpp"
#include "lpr/retrieval.hpp"
#include "lpr/sample.hpp"
#include "lpr/types.hpp"

namespace lpr {

struct TrainConfig {
  // preprocessing (training path; evaluation skips ground removal)
  double voxel_size = 0.1;
  std::size_t max_points = 35000;
  double ground_dist_thresh = 0.3;
  int ground_max_iters = 100;
  double jitter_sigma = 0.01;
  double jitter_clip = 0.03;

  // encoder
  int feature_dim = 16;
  int neighborhood_k = 16;
  bool normalize_intensity = true;

  // correspondence construction
  double corr_radius = 0.3;
  bool use_icp = true;
  std::size_t corr_sample = 5192;

  // losses
  LocalLossConfig local;
  QuadrupletConfig quad;
  JointConfig joint;
  bool local_loss_both_positives = false;
  double epn_alpha = 0.5;

  // tuple geometry
  double tau_positive = 3.0;
  double tau_negative = 20.0;

  // optimization
  double learning_rate = 0.001;
  double lr_drop_factor = 10.0;
  int lr_drop_epoch = 10;
  int epochs = 30;
  int batch_tuples = 1;
  std::uint64_t seed = 0;

  void validate() const;
  double lr_at_epoch(int epoch) const {
    return epoch < lr_drop_epoch ? learning_rate : learning_rate / lr_drop_factor;
  }
};

struct TrainingTuple {
  Sample anchor;
  std::vector<Sample> positives;
  std::vector<Sample> negatives;
  Sample other_negative;

  // dataset indices, kept so constraints can be re-verified post hoc
  std::size_t anchor_index = 0;
  std::vector<std::size_t> positive_indices;
  std::vector<std::size_t> negative_indices;
  std::size_t other_negative_index = 0;
};

// Draws one tuple: an anchor with positives within tau_positive, negatives
// beyond tau_negative, and an extra negative farther than tau_positive from
// both the anchor and every sampled negative. Throws DatasetTooSparseError
// when no anchor qualifies. Deterministic per seed.
TrainingTuple sample_tuple(const std::vector<Sample>& dataset,
                           const TrainConfig& cfg, std::uint64_t rng_seed);

// Adam with bias correction.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Eigen::MatrixXd> m_w, v_w;
  std::vector<Eigen::VectorXd> m_b, v_b;

  static AdamState zeros_like(const EncoderParams& p);
};

void adam_step(EncoderParams& params, const EncoderGrads& grads, AdamState& opt,
               double lr);

// A tuple after loading, preprocessing and augmentation. Cloud order:
// anchor, positives..., negatives..., other_negative.
struct PreparedTuple {
  std::vector<PointCloud> clouds;
  std::size_t num_positives = 0;
  std::size_t num_negatives = 0;
  // anchor <-> positive[k] correspondences, one set (or two when the local
  // loss covers both positives)
  std::vector<CorrespondenceSet> correspondences;
  bool skipped = false;  // empty correspondence set while omega > 0
};

PreparedTuple prepare_tuple(const TrainingTuple& tuple, const TrainConfig& cfg,
                            std::uint64_t seed);

struct TupleEval {
  double lg = 0.0;
  double llc = 0.0;
  double joint = 0.0;
  EncoderGrads grads;
};

// Forward and backward through encoder, aggregation and both losses; returns
// the joint-loss gradient with respect to the encoder parameters.
TupleEval eval_tuple(const PreparedTuple& prepared, const EncoderParams& params,
                     const TrainConfig& cfg, std::uint64_t seed);

// Forward only (used by finite-difference checks).
double eval_tuple_loss(const PreparedTuple& prepared, const EncoderParams& params,
                       const TrainConfig& cfg, std::uint64_t seed);

struct StepResult {
  double lg = 0.0;
  double llc = 0.0;
  double joint = 0.0;
  bool skipped = false;
};

// One optimizer step on one tuple.
StepResult train_step(const TrainingTuple& tuple, EncoderParams& params,
                      AdamState& opt, const TrainConfig& cfg, double lr,
                      std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  int steps = 0;  // executed (non-skipped) tuples
  double mean_lg = 0.0;
  double mean_llc = 0.0;
  double mean_joint = 0.0;
  double lr = 0.0;
  int skipped = 0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

std::string format_train_log(const TrainLog& log);
void save_train_log(const std::string& path, const TrainLog& log);

struct TrainResult {
  EncoderParams params;
  AdamState opt;
  TrainLog log;
  std::uint64_t steps_done = 0;
};

// Epochs of sampled tuples (ceil(|dataset| / 4) per epoch) with the single
// learning-rate drop at lr_drop_epoch. Writes a checkpoint per epoch when
// checkpoint_dir is non-empty; resumes step/epoch counters from `resume`.
TrainResult train_loop(const std::vector<Sample>& dataset, const TrainConfig& cfg,
                       const std::string& checkpoint_dir = "",
                       const Checkpoint* resume = nullptr,
                       const std::function<void(const EpochRecord&)>& on_epoch = {});

// Evaluation-path descriptor extraction: voxel filter and point cap only (no
// ground removal, no augmentation), then encode + aggregate. Optionally
// collects per-entry stage timings, in which case each new entry is also
// queried against its predecessors.
std::vector<DbEntry> describe_samples(const std::vector<Sample>& samples,
                                      const EncoderParams& params,
                                      const TrainConfig& cfg,
                                      std::vector<StageTiming>* timings = nullptr,
                                      double timing_exclusion_time = 30.0);

struct AblationRow {
  double omega = 0.0;
  std::vector<double> f1max_per_seed;
  double mean_f1max = 0.0;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;  // one per omega, input order
};

// Trains one model per (omega, seed) on `train`, evaluates each on `eval`,
// and reports per-seed and mean F1max per omega. `parallelism` <= 0 uses the
// hardware concurrency.
AblationReport run_ablation(const std::vector<Sample>& train,
                            const std::vector<Sample>& eval,
                            const std::vector<double>& omegas,
                            const TrainConfig& base_cfg, const EvalConfig& eval_cfg,
                            const std::vector<std::uint64_t>& seeds,
                            int parallelism = 0);

std::string format_ablation_report(const AblationReport& report);

}  // namespace lpr
