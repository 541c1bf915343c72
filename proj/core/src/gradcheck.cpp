#include "lpr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>
#include <sstream>

#include "lpr/aggregation.hpp"
#include "lpr/encoder.hpp"
#include "lpr/losses.hpp"
#include "lpr/training.hpp"

namespace lpr {

namespace {

constexpr double kStep = 1e-6;
constexpr int kDim = 4;
constexpr int kPoints = 20;
constexpr double kMinSpectralGap = 0.1;
constexpr double kMinHingeMargin = 1e-3;
constexpr double kMinSelectionGap = 1e-4;
constexpr int kMaxAttemptsPerInstance = 200;

struct TensorPair {
  Eigen::VectorXd analytic;
  Eigen::VectorXd fd;
};

double tensor_rel_err(const TensorPair& t) {
  const double diff = (t.analytic - t.fd).norm();
  return diff / std::max({t.analytic.norm(), t.fd.norm(), 1e-8});
}

// Flattened views over the encoder parameter tensors, in checkpoint order.
struct TensorView {
  double* data;
  Eigen::Index size;
};

std::vector<TensorView> param_views(EncoderParams& p) {
  std::vector<TensorView> views;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    views.push_back({p.weights[l].data(), p.weights[l].size()});
    views.push_back({p.biases[l].data(), p.biases[l].size()});
  }
  return views;
}

std::vector<Eigen::VectorXd> grads_as_vectors(const EncoderGrads& g) {
  std::vector<Eigen::VectorXd> out;
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    out.emplace_back(Eigen::Map<const Eigen::VectorXd>(g.weights[l].data(),
                                                       g.weights[l].size()));
    out.push_back(g.biases[l]);
  }
  return out;
}

// FD over every entry of `views`, using `loss` as the objective.
std::vector<Eigen::VectorXd> fd_over_views(const std::vector<TensorView>& views,
                                           const std::function<double()>& loss) {
  std::vector<Eigen::VectorXd> out;
  for (const auto& view : views) {
    Eigen::VectorXd fd(view.size);
    for (Eigen::Index i = 0; i < view.size; ++i) {
      double& x = view.data[i];
      const double x0 = x;
      x = x0 + kStep;
      const double fp = loss();
      x = x0 - kStep;
      const double fm = loss();
      x = x0;
      fd(i) = (fp - fm) / (2.0 * kStep);
    }
    out.push_back(std::move(fd));
  }
  return out;
}

PointCloud random_cloud(std::mt19937_64& rng, int n, double extent) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointCloud cloud;
  for (int i = 0; i < n; ++i) {
    cloud.points.push_back(Point{u(rng) * extent, u(rng) * extent,
                                 u(rng) * extent, u(rng)});
  }
  return cloud;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows,
                              Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = scale * n(rng);
    }
  }
  return m;
}

// Pre-activations must sit away from the ReLU kink for FD to be meaningful.
bool relu_margins_ok(const std::vector<PointDescriptorInput>& inputs,
                     const EncoderParams& params) {
  Eigen::VectorXd a(kEncoderInputDim);
  for (const auto& input : inputs) {
    for (int c = 0; c < kEncoderInputDim; ++c) {
      a(c) = input.values[static_cast<std::size_t>(c)];
    }
    const Eigen::VectorXd z1 = params.weights[0] * a + params.biases[0];
    if (z1.cwiseAbs().minCoeff() < 1e-5) {
      return false;
    }
    const Eigen::VectorXd z2 =
        params.weights[1] * z1.cwiseMax(0.0) + params.biases[1];
    if (z2.cwiseAbs().minCoeff() < 1e-5) {
      return false;
    }
  }
  return true;
}

bool pooled_spectrum_ok(const FeatureMap& fm) {
  const PooledMatrix pooled = second_order_pool(fm);
  const SvdResult svd = svd_square(pooled.values);
  const Eigen::VectorXd& s = svd.singular_values;
  for (Eigen::Index i = 0; i + 1 < s.size(); ++i) {
    if (s(i) - s(i + 1) < kMinSpectralGap) {
      return false;
    }
  }
  if (s(s.size() - 1) < kMinSpectralGap) {
    return false;
  }
  // the element-wise max must be attained with a clear winner
  const auto n = fm.features.rows();
  for (Eigen::Index x = 0; x < fm.features.cols(); ++x) {
    for (Eigen::Index y = x; y < fm.features.cols(); ++y) {
      double best = -1e300;
      double second = -1e300;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double v = fm.features(i, x) * fm.features(i, y);
        if (v > best) {
          second = best;
          best = v;
        } else if (v > second) {
          second = v;
        }
      }
      if (best - second < kMinSelectionGap) {
        return false;
      }
    }
  }
  return true;
}

struct MarginCheck {
  bool ok = true;

  void require_away_from(double value, double kink, double margin) {
    if (std::abs(value - kink) < margin) {
      ok = false;
    }
  }
};

// Hinge arguments and mined/hardest selections must be clearly decided.
bool local_loss_margins_ok(const FeatureMap& f1, const FeatureMap& f2,
                           const CorrespondenceSet& c12,
                           const std::vector<std::size_t>& mined_1,
                           const std::vector<std::size_t>& mined_2,
                           const LocalLossConfig& cfg) {
  MarginCheck check;
  auto mined_top2 = [](const Eigen::MatrixXd& features, const Eigen::RowVectorXd& q,
                       const std::vector<std::size_t>& mined) {
    double best = 1e300;
    double second = 1e300;
    for (std::size_t k : mined) {
      const double d2 = (features.row(static_cast<Eigen::Index>(k)) - q).squaredNorm();
      if (d2 < best) {
        second = best;
        best = d2;
      } else if (d2 < second) {
        second = d2;
      }
    }
    return std::pair<double, double>(best, second);
  };

  for (const auto& [i, j] : c12.pairs) {
    const Eigen::RowVectorXd fi = f1.features.row(static_cast<Eigen::Index>(i));
    const Eigen::RowVectorXd fj = f2.features.row(static_cast<Eigen::Index>(j));
    check.require_away_from((fi - fj).squaredNorm(), cfg.positive_margin,
                            kMinHingeMargin);

    const auto [b2, s2] = mined_top2(f2.features, fi, mined_2);
    if (s2 - b2 < kMinSelectionGap) {
      return false;
    }
    check.require_away_from(b2, cfg.negative_margin, kMinHingeMargin);

    const auto [b1, s1] = mined_top2(f1.features, fj, mined_1);
    if (s1 - b1 < kMinSelectionGap) {
      return false;
    }
    check.require_away_from(b1, cfg.negative_margin, kMinHingeMargin);
  }
  return check.ok;
}

bool quadruplet_margins_ok(const GlobalDescriptor& anchor,
                           const std::vector<GlobalDescriptor>& positives,
                           const std::vector<GlobalDescriptor>& negatives,
                           const GlobalDescriptor& other,
                           const QuadrupletConfig& cfg) {
  // hardest positive must be a clear argmax
  std::vector<double> dists;
  for (const auto& p : positives) {
    dists.push_back((anchor.values - p.values).norm());
  }
  std::vector<double> sorted = dists;
  std::sort(sorted.begin(), sorted.end());
  if (positives.size() > 1 &&
      sorted[sorted.size() - 1] - sorted[sorted.size() - 2] < kMinSelectionGap) {
    return false;
  }

  const std::size_t hp = hardest_positive(anchor, positives);
  const double d_ap = (anchor.values - positives[hp].values).squaredNorm();
  MarginCheck check;
  for (const auto& n : negatives) {
    const double d_an = (anchor.values - n.values).squaredNorm();
    const double d_sn = (other.values - n.values).squaredNorm();
    check.require_away_from(d_ap - d_an + cfg.alpha, 0.0, kMinHingeMargin);
    check.require_away_from(d_ap - d_sn + cfg.beta, 0.0, kMinHingeMargin);
  }
  return check.ok;
}

// ---- component checks ----------------------------------------------------
// Each returns the tensor pairs from one accepted instance, or nullopt when
// the drawn instance is ill-conditioned and should be redrawn.

std::optional<std::vector<TensorPair>> check_encoder_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const PointCloud cloud = random_cloud(rng, kPoints, 4.0);

  EncoderParams params = init_encoder_params(kDim, 4, mix_seed(seed, 1));
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& b : params.biases) {
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      b(i) = u(rng);
    }
  }

  const auto inputs = build_inputs(cloud, params.neighborhood_k);
  if (!relu_margins_ok(inputs, params)) {
    return std::nullopt;
  }

  const Eigen::MatrixXd upstream = random_matrix(rng, kPoints, kDim);
  const EncoderGrads analytic = encode_inputs_backward(inputs, params, upstream);

  EncoderParams probe = params;
  const auto views = param_views(probe);
  const auto loss = [&]() {
    return encode_inputs(inputs, probe).features.cwiseProduct(upstream).sum();
  };
  const auto fd = fd_over_views(views, loss);

  const auto analytic_vecs = grads_as_vectors(analytic);
  std::vector<TensorPair> pairs;
  for (std::size_t t = 0; t < fd.size(); ++t) {
    pairs.push_back({analytic_vecs[t], fd[t]});
  }
  return pairs;
}

std::optional<std::vector<TensorPair>> check_aggregation_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FeatureMap fm;
  fm.features = random_matrix(rng, kPoints, kDim);
  if (!pooled_spectrum_ok(fm)) {
    return std::nullopt;
  }
  const Eigen::VectorXd upstream = random_matrix(rng, kDim * kDim, 1).col(0);

  const Eigen::MatrixXd analytic = aggregate_backward(fm, upstream, 0.5);

  FeatureMap probe = fm;
  std::vector<TensorView> views = {{probe.features.data(), probe.features.size()}};
  const auto loss = [&]() { return aggregate(probe, 0.5).values.dot(upstream); };
  const auto fd = fd_over_views(views, loss);

  std::vector<TensorPair> pairs;
  pairs.push_back({Eigen::Map<const Eigen::VectorXd>(analytic.data(), analytic.size()),
                   fd[0]});
  return pairs;
}

std::optional<std::vector<TensorPair>> check_local_loss_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FeatureMap f1, f2;
  f1.features = random_matrix(rng, kPoints, kDim);
  f2.features = random_matrix(rng, kPoints, kDim);

  CorrespondenceSet c12;
  c12.radius = 0.3;
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  for (int i = 0; i < kPoints; ++i) {
    const Eigen::Vector3d p(u(rng), u(rng), u(rng));
    c12.aligned_p1.push_back(p);
    c12.aligned_p2.push_back(p + Eigen::Vector3d(jitter(rng), jitter(rng), jitter(rng)));
  }
  for (std::size_t i = 0; i < 12; ++i) {
    c12.pairs.emplace_back(i, i);
  }

  LocalLossConfig cfg;
  cfg.mining_size = 8;
  const auto mined_2 = sample_indices(f2.size(), cfg.mining_size, mix_seed(seed, 2));
  const auto mined_1 = sample_indices(f1.size(), cfg.mining_size, mix_seed(seed, 3));
  if (!local_loss_margins_ok(f1, f2, c12, mined_1, mined_2, cfg)) {
    return std::nullopt;
  }

  const LocalLossResult analytic =
      hardest_contrastive_loss_mined(f1, f2, c12, mined_1, mined_2, cfg);

  FeatureMap p1 = f1;
  FeatureMap p2 = f2;
  std::vector<TensorView> views = {{p1.features.data(), p1.features.size()},
                                   {p2.features.data(), p2.features.size()}};
  const auto loss = [&]() {
    return hardest_contrastive_loss_mined(p1, p2, c12, mined_1, mined_2, cfg).loss;
  };
  const auto fd = fd_over_views(views, loss);

  std::vector<TensorPair> pairs;
  pairs.push_back({Eigen::Map<const Eigen::VectorXd>(analytic.grad_f1.data(),
                                                     analytic.grad_f1.size()),
                   fd[0]});
  pairs.push_back({Eigen::Map<const Eigen::VectorXd>(analytic.grad_f2.data(),
                                                     analytic.grad_f2.size()),
                   fd[1]});
  return pairs;
}

std::optional<std::vector<TensorPair>> check_quadruplet_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int dd = kDim * kDim;
  auto make_desc = [&]() {
    GlobalDescriptor g;
    g.values = random_matrix(rng, dd, 1).col(0) * 0.5;
    return g;
  };

  GlobalDescriptor anchor = make_desc();
  std::vector<GlobalDescriptor> positives = {make_desc(), make_desc(), make_desc()};
  std::vector<GlobalDescriptor> negatives;
  for (int i = 0; i < 9; ++i) {
    negatives.push_back(make_desc());
  }
  GlobalDescriptor other = make_desc();

  QuadrupletConfig cfg;
  if (!quadruplet_margins_ok(anchor, positives, negatives, other, cfg)) {
    return std::nullopt;
  }

  const QuadrupletResult analytic =
      quadruplet_loss(anchor, positives, negatives, other, cfg);

  std::vector<TensorView> views = {{anchor.values.data(), anchor.values.size()}};
  for (auto& p : positives) {
    views.push_back({p.values.data(), p.values.size()});
  }
  for (auto& n : negatives) {
    views.push_back({n.values.data(), n.values.size()});
  }
  views.push_back({other.values.data(), other.values.size()});

  const auto loss = [&]() {
    return quadruplet_loss(anchor, positives, negatives, other, cfg).loss;
  };
  const auto fd = fd_over_views(views, loss);

  std::vector<TensorPair> pairs;
  std::size_t t = 0;
  pairs.push_back({analytic.grad_anchor, fd[t++]});
  for (const auto& g : analytic.grad_positives) {
    pairs.push_back({g, fd[t++]});
  }
  for (const auto& g : analytic.grad_negatives) {
    pairs.push_back({g, fd[t++]});
  }
  pairs.push_back({analytic.grad_other_negative, fd[t++]});
  return pairs;
}

std::optional<std::vector<TensorPair>> check_joint_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);

  TrainConfig cfg;
  cfg.feature_dim = kDim;
  cfg.neighborhood_k = 4;
  cfg.joint.omega = 0.7;
  cfg.local.mining_size = 8;
  cfg.corr_radius = 0.3;
  cfg.quad.num_positives = 2;
  cfg.quad.num_negatives = 9;

  EncoderParams params =
      init_encoder_params(cfg.feature_dim, cfg.neighborhood_k, mix_seed(seed, 1));
  std::uniform_real_distribution<double> ub(-0.5, 0.5);
  for (auto& b : params.biases) {
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      b(i) = ub(rng);
    }
  }

  PreparedTuple prepared;
  prepared.num_positives = static_cast<std::size_t>(cfg.quad.num_positives);
  prepared.num_negatives = static_cast<std::size_t>(cfg.quad.num_negatives);
  const std::size_t n_clouds = 1 + prepared.num_positives + prepared.num_negatives + 1;

  // per-cloud regeneration until the encoder and pooled spectra are
  // well-conditioned at the chosen parameters
  for (std::size_t c = 0; c < n_clouds; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      PointCloud cloud = random_cloud(rng, kPoints, 4.0);
      if (c == 1) {
        // first positive: a jittered copy of the anchor so correspondences exist
        cloud = prepared.clouds[0];
        std::uniform_real_distribution<double> jitter(-0.05, 0.05);
        for (auto& p : cloud.points) {
          p.x += jitter(rng);
          p.y += jitter(rng);
          p.z += jitter(rng);
        }
      }
      const auto inputs = build_inputs(cloud, cfg.neighborhood_k);
      if (!relu_margins_ok(inputs, params)) {
        continue;
      }
      const FeatureMap fm = encode_inputs(inputs, params);
      if (!pooled_spectrum_ok(fm)) {
        continue;
      }
      prepared.clouds.push_back(std::move(cloud));
      placed = true;
    }
    if (!placed) {
      return std::nullopt;
    }
  }

  CorrespondenceSet c12;
  c12.radius = cfg.corr_radius;
  for (const auto& p : prepared.clouds[0].points) {
    c12.aligned_p1.push_back(p.xyz());
  }
  for (const auto& p : prepared.clouds[1].points) {
    c12.aligned_p2.push_back(p.xyz());
  }
  for (std::size_t i = 0; i < prepared.clouds[0].size(); ++i) {
    c12.pairs.emplace_back(i, i);
  }
  prepared.correspondences.push_back(std::move(c12));

  const std::uint64_t eval_seed = mix_seed(seed, 9);

  // conditioning of both losses at the base parameters
  {
    std::vector<FeatureMap> fms;
    std::vector<GlobalDescriptor> descs;
    for (const auto& cloud : prepared.clouds) {
      fms.push_back(encode(cloud, params));
      descs.push_back(aggregate(fms.back(), cfg.epn_alpha));
    }
    const std::vector<GlobalDescriptor> positives(descs.begin() + 1, descs.begin() + 3);
    const std::vector<GlobalDescriptor> negatives(descs.begin() + 3, descs.begin() + 12);
    if (!quadruplet_margins_ok(descs[0], positives, negatives, descs[12], cfg.quad)) {
      return std::nullopt;
    }
    const std::uint64_t lseed = mix_seed(eval_seed, 200);
    const auto mined_2 =
        sample_indices(fms[1].size(), cfg.local.mining_size, mix_seed(lseed, 0));
    const auto mined_1 =
        sample_indices(fms[0].size(), cfg.local.mining_size, mix_seed(lseed, 1));
    if (!local_loss_margins_ok(fms[0], fms[1], prepared.correspondences[0], mined_1,
                               mined_2, cfg.local)) {
      return std::nullopt;
    }
  }

  const TupleEval analytic = eval_tuple(prepared, params, cfg, eval_seed);

  EncoderParams probe = params;
  const auto views = param_views(probe);
  const auto loss = [&]() { return eval_tuple_loss(prepared, probe, cfg, eval_seed); };
  const auto fd = fd_over_views(views, loss);

  const auto analytic_vecs = grads_as_vectors(analytic.grads);
  std::vector<TensorPair> pairs;
  for (std::size_t t = 0; t < fd.size(); ++t) {
    pairs.push_back({analytic_vecs[t], fd[t]});
  }
  return pairs;
}

using InstanceCheck = std::optional<std::vector<TensorPair>> (*)(std::uint64_t);

InstanceCheck component_check(const std::string& name) {
  if (name == "encoder") return &check_encoder_instance;
  if (name == "aggregation") return &check_aggregation_instance;
  if (name == "local_loss") return &check_local_loss_instance;
  if (name == "quadruplet_loss") return &check_quadruplet_instance;
  if (name == "joint_loss") return &check_joint_instance;
  throw InvalidInputError("gradcheck: unknown component '" + name + "'");
}

void flip_one_sign(std::vector<TensorPair>& pairs) {
  for (auto& pair : pairs) {
    Eigen::Index idx = 0;
    const double mag = pair.analytic.cwiseAbs().maxCoeff(&idx);
    if (mag > 0.0) {
      pair.analytic(idx) = -pair.analytic(idx);
      return;
    }
  }
}

}  // namespace

std::vector<GradCheckResult> run_gradient_checks(int instances, double tolerance,
                                                 const std::string& inject_sign_error) {
  if (instances < 1) {
    throw InvalidInputError("gradcheck: instances must be >= 1");
  }
  if (!inject_sign_error.empty()) {
    component_check(inject_sign_error);  // validates the name
  }

  std::vector<GradCheckResult> results;
  for (const std::string& name : gradcheck_components()) {
    const InstanceCheck check = component_check(name);
    GradCheckResult res;
    res.component = name;

    std::uint64_t attempt = 0;
    while (res.instances < instances) {
      if (attempt > static_cast<std::uint64_t>(kMaxAttemptsPerInstance) *
                        static_cast<std::uint64_t>(instances)) {
        throw NumericalError("gradcheck: could not draw a well-conditioned " +
                             name + " instance");
      }
      const std::uint64_t seed =
          mix_seed(0x6C0DE, std::hash<std::string>{}(name), attempt++);
      auto pairs = check(seed);
      if (!pairs) {
        continue;
      }
      if (name == inject_sign_error && res.instances == 0) {
        flip_one_sign(*pairs);
      }
      for (const auto& pair : *pairs) {
        res.max_rel_err = std::max(res.max_rel_err, tensor_rel_err(pair));
      }
      res.instances += 1;
    }
    res.pass = res.max_rel_err < tolerance;
    results.push_back(res);
  }
  return results;
}

std::string format_gradcheck_report(const std::vector<GradCheckResult>& results) {
  std::ostringstream out;
  for (const auto& r : results) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "[%s] %-16s instances=%d max_rel_err=%.3g\n",
                  r.pass ? "PASS" : "FAIL", r.component.c_str(), r.instances,
                  r.max_rel_err);
    out << buf;
  }
  return out.str();
}

}  // namespace lpr
