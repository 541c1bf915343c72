#include "lpr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace lpr {

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count,
                                        std::uint64_t rng_seed) {
  if (count >= n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(rng_seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

// Feature-space argmin over the mined subset; ties toward lowest index.
struct MinedHit {
  std::size_t index = 0;
  double dist_sq = std::numeric_limits<double>::infinity();
};

MinedHit mined_min(const Eigen::MatrixXd& features, const Eigen::RowVectorXd& query,
                   const std::vector<std::size_t>& mined) {
  MinedHit hit;
  for (std::size_t k : mined) {
    const double d2 =
        (features.row(static_cast<Eigen::Index>(k)) - query).squaredNorm();
    if (d2 < hit.dist_sq) {
      hit.dist_sq = d2;
      hit.index = k;
    }
  }
  return hit;
}

}  // namespace

LocalLossResult hardest_contrastive_loss_mined(
    const FeatureMap& f1, const FeatureMap& f2, const CorrespondenceSet& c12,
    const std::vector<std::size_t>& mined_1, const std::vector<std::size_t>& mined_2,
    const LocalLossConfig& cfg) {
  cfg.validate();
  if (c12.empty()) {
    throw InvalidInputError("hardest_contrastive_loss: empty correspondence set");
  }
  if (f1.size() == 0 || f2.size() == 0) {
    throw InvalidInputError("hardest_contrastive_loss: empty feature map");
  }
  if (c12.aligned_p1.size() != f1.size() || c12.aligned_p2.size() != f2.size()) {
    throw InvalidInputError(
        "hardest_contrastive_loss: aligned coordinates do not match features");
  }

  const double r = c12.radius;
  const std::size_t n_pairs = c12.pairs.size();

  LocalLossResult res;
  res.grad_f1 = Eigen::MatrixXd::Zero(f1.features.rows(), f1.features.cols());
  res.grad_f2 = Eigen::MatrixXd::Zero(f2.features.rows(), f2.features.cols());

  // Per-pair mined minimizers and their geometric validity indicators. The
  // minimizer depends only on the query point, but counts follow the pair
  // sum per the loss definition.
  struct PairTerms {
    MinedHit hit_i, hit_j;
    bool valid_i = false, valid_j = false;
  };
  std::vector<PairTerms> terms(n_pairs);

  std::size_t count_1 = 0;  // valid mined negatives for the cloud-1 term
  std::size_t count_2 = 0;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const auto [i, j] = c12.pairs[p];
    PairTerms& t = terms[p];
    t.hit_i = mined_min(f2.features, f1.features.row(static_cast<Eigen::Index>(i)),
                        mined_2);
    t.hit_j = mined_min(f1.features, f2.features.row(static_cast<Eigen::Index>(j)),
                        mined_1);
    if (!mined_2.empty()) {
      t.valid_i = (c12.aligned_p1[i] - c12.aligned_p2[t.hit_i.index]).norm() >= r;
    }
    if (!mined_1.empty()) {
      t.valid_j = (c12.aligned_p2[j] - c12.aligned_p1[t.hit_j.index]).norm() >= r;
    }
    count_1 += t.valid_i ? 1 : 0;
    count_2 += t.valid_j ? 1 : 0;
  }

  const double inv_pairs = 1.0 / static_cast<double>(n_pairs);
  const double inv_1 = count_1 > 0 ? 1.0 / static_cast<double>(count_1) : 0.0;
  const double inv_2 = count_2 > 0 ? 1.0 / static_cast<double>(count_2) : 0.0;

  double loss = 0.0;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const auto [i, j] = c12.pairs[p];
    const auto ei = static_cast<Eigen::Index>(i);
    const auto ej = static_cast<Eigen::Index>(j);
    const PairTerms& t = terms[p];

    // positive hinge
    const Eigen::RowVectorXd diff = f1.features.row(ei) - f2.features.row(ej);
    const double pos = diff.squaredNorm() - cfg.positive_margin;
    if (pos > 0.0) {
      loss += pos * inv_pairs;
      res.grad_f1.row(ei) += (2.0 * inv_pairs) * diff;
      res.grad_f2.row(ej) -= (2.0 * inv_pairs) * diff;
    }

    // mined-negative hinge for the cloud-1 query
    if (t.valid_i) {
      const double hinge = cfg.negative_margin - t.hit_i.dist_sq;
      if (hinge > 0.0) {
        loss += cfg.negative_weight * hinge * inv_1;
        const auto ek = static_cast<Eigen::Index>(t.hit_i.index);
        const Eigen::RowVectorXd nd = f1.features.row(ei) - f2.features.row(ek);
        const double w = 2.0 * cfg.negative_weight * inv_1;
        res.grad_f1.row(ei) -= w * nd;
        res.grad_f2.row(ek) += w * nd;
      }
    }

    // mined-negative hinge for the cloud-2 query
    if (t.valid_j) {
      const double hinge = cfg.negative_margin - t.hit_j.dist_sq;
      if (hinge > 0.0) {
        loss += cfg.negative_weight * hinge * inv_2;
        const auto ek = static_cast<Eigen::Index>(t.hit_j.index);
        const Eigen::RowVectorXd nd = f2.features.row(ej) - f1.features.row(ek);
        const double w = 2.0 * cfg.negative_weight * inv_2;
        res.grad_f2.row(ej) -= w * nd;
        res.grad_f1.row(ek) += w * nd;
      }
    }
  }

  res.loss = loss;
  return res;
}

LocalLossResult hardest_contrastive_loss(const FeatureMap& f1, const FeatureMap& f2,
                                         const CorrespondenceSet& c12,
                                         const LocalLossConfig& cfg,
                                         std::uint64_t rng_seed) {
  const auto mined_2 =
      sample_indices(f2.size(), cfg.mining_size, mix_seed(rng_seed, 0));
  const auto mined_1 =
      sample_indices(f1.size(), cfg.mining_size, mix_seed(rng_seed, 1));
  return hardest_contrastive_loss_mined(f1, f2, c12, mined_1, mined_2, cfg);
}

std::size_t hardest_positive(const GlobalDescriptor& anchor,
                             const std::vector<GlobalDescriptor>& positives) {
  if (positives.empty()) {
    throw InvalidInputError("hardest_positive: no positives");
  }
  std::size_t best = 0;
  double best_dist = -1.0;
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const double d = (anchor.values - positives[i].values).norm();
    if (d > best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return best;
}

QuadrupletResult quadruplet_loss(const GlobalDescriptor& anchor,
                                 const std::vector<GlobalDescriptor>& positives,
                                 const std::vector<GlobalDescriptor>& negatives,
                                 const GlobalDescriptor& other_negative,
                                 const QuadrupletConfig& cfg) {
  cfg.validate();
  if (positives.empty() || negatives.empty()) {
    throw InvalidInputError("quadruplet_loss: needs positives and negatives");
  }

  QuadrupletResult res;
  res.hardest_positive_index = hardest_positive(anchor, positives);
  const Eigen::VectorXd& g_a = anchor.values;
  const Eigen::VectorXd& g_hp = positives[res.hardest_positive_index].values;

  res.grad_anchor = Eigen::VectorXd::Zero(g_a.size());
  res.grad_positives.assign(positives.size(),
                            Eigen::VectorXd::Zero(g_a.size()));
  res.grad_negatives.assign(negatives.size(),
                            Eigen::VectorXd::Zero(g_a.size()));
  res.grad_other_negative = Eigen::VectorXd::Zero(g_a.size());
  Eigen::VectorXd& grad_hp = res.grad_positives[res.hardest_positive_index];

  const Eigen::VectorXd ap = g_a - g_hp;
  const double d_ap = ap.squaredNorm();

  for (std::size_t ni = 0; ni < negatives.size(); ++ni) {
    const Eigen::VectorXd an = g_a - negatives[ni].values;
    const Eigen::VectorXd sn = other_negative.values - negatives[ni].values;

    const double h1 = d_ap - an.squaredNorm() + cfg.alpha;
    if (h1 > 0.0) {
      res.loss += h1;
      res.grad_anchor += 2.0 * ap - 2.0 * an;
      grad_hp -= 2.0 * ap;
      res.grad_negatives[ni] += 2.0 * an;
    }

    const double h2 = d_ap - sn.squaredNorm() + cfg.beta;
    if (h2 > 0.0) {
      res.loss += h2;
      res.grad_anchor += 2.0 * ap;
      grad_hp -= 2.0 * ap;
      res.grad_other_negative -= 2.0 * sn;
      res.grad_negatives[ni] += 2.0 * sn;
    }
  }
  return res;
}

double joint_loss_value(double lg, double llc, const JointConfig& cfg) {
  cfg.validate();
  return lg + cfg.omega * llc;
}

EncoderGrads joint_loss_grads(const EncoderGrads& lg_grads,
                              const EncoderGrads& llc_grads,
                              const JointConfig& cfg) {
  cfg.validate();
  EncoderGrads out = lg_grads;
  out.add_scaled(llc_grads, cfg.omega);
  return out;
}

}  // namespace lpr
