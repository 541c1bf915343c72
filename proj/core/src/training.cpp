#include "lpr/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "lpr/aggregation.hpp"
#include "lpr/pointcloud.hpp"

namespace lpr {

void TrainConfig::validate() const {
  if (voxel_size <= 0.0 || max_points == 0) {
    throw ConfigError("train config: bad preprocessing parameters");
  }
  if (ground_dist_thresh <= 0.0 || ground_max_iters <= 0) {
    throw ConfigError("train config: bad ground-removal parameters");
  }
  if (jitter_sigma < 0.0 || jitter_clip < 0.0) {
    throw ConfigError("train config: bad jitter parameters");
  }
  if (feature_dim < 1 || neighborhood_k < 1) {
    throw ConfigError("train config: bad encoder parameters");
  }
  if (corr_radius <= 0.0 || corr_sample == 0) {
    throw ConfigError("train config: bad correspondence parameters");
  }
  if (epn_alpha <= 0.0 || epn_alpha > 1.0) {
    throw ConfigError("train config: epn_alpha must be in (0, 1]");
  }
  if (tau_positive <= 0.0 || tau_positive >= tau_negative) {
    throw ConfigError("train config: requires 0 < tau_positive < tau_negative");
  }
  if (learning_rate < 0.0 || lr_drop_factor <= 0.0 || lr_drop_epoch < 0) {
    throw ConfigError("train config: bad learning-rate schedule");
  }
  if (epochs < 0 || batch_tuples < 1) {
    throw ConfigError("train config: bad epoch/batch settings");
  }
  local.validate();
  quad.validate();
  joint.validate();
}

namespace {

double pose_distance(const Sample& a, const Sample& b) {
  return (a.pose.translation - b.pose.translation).norm();
}

}  // namespace

TrainingTuple sample_tuple(const std::vector<Sample>& dataset,
                           const TrainConfig& cfg, std::uint64_t rng_seed) {
  cfg.validate();
  const std::size_t n = dataset.size();
  const std::size_t need_pos = static_cast<std::size_t>(cfg.quad.num_positives);
  const std::size_t need_neg = static_cast<std::size_t>(cfg.quad.num_negatives);

  // candidate lists per sample
  std::vector<std::vector<std::size_t>> positives(n), negatives(n);
  std::vector<std::size_t> eligible;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b) {
        continue;
      }
      const double d = pose_distance(dataset[a], dataset[b]);
      if (d < cfg.tau_positive) {
        positives[a].push_back(b);
      } else if (d > cfg.tau_negative) {
        negatives[a].push_back(b);
      }
    }
    if (positives[a].size() >= need_pos && negatives[a].size() >= need_neg) {
      eligible.push_back(a);
    }
  }
  if (eligible.empty()) {
    throw DatasetTooSparseError(
        "sample_tuple: no anchor has enough positives and negatives");
  }

  std::mt19937_64 rng(rng_seed);
  auto draw = [&rng](std::vector<std::size_t> pool, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(count);
    return pool;
  };

  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::uniform_int_distribution<std::size_t> pick_anchor(0, eligible.size() - 1);
    const std::size_t a = eligible[pick_anchor(rng)];
    const auto pos = draw(positives[a], need_pos);
    const auto neg = draw(negatives[a], need_neg);

    // extra negative: farther than tau_positive from the anchor and from
    // every sampled negative
    std::vector<std::size_t> extra_pool;
    for (std::size_t s = 0; s < n; ++s) {
      if (s == a) {
        continue;
      }
      if (pose_distance(dataset[s], dataset[a]) <= cfg.tau_positive) {
        continue;
      }
      bool ok = true;
      for (std::size_t ni : neg) {
        if (s == ni || pose_distance(dataset[s], dataset[ni]) <= cfg.tau_positive) {
          ok = false;
          break;
        }
      }
      if (ok) {
        extra_pool.push_back(s);
      }
    }
    if (extra_pool.empty()) {
      continue;  // redraw
    }
    std::uniform_int_distribution<std::size_t> pick_extra(0, extra_pool.size() - 1);
    const std::size_t star = extra_pool[pick_extra(rng)];

    TrainingTuple tuple;
    tuple.anchor = dataset[a];
    tuple.anchor_index = a;
    for (std::size_t p : pos) {
      tuple.positives.push_back(dataset[p]);
      tuple.positive_indices.push_back(p);
    }
    for (std::size_t q : neg) {
      tuple.negatives.push_back(dataset[q]);
      tuple.negative_indices.push_back(q);
    }
    tuple.other_negative = dataset[star];
    tuple.other_negative_index = star;
    return tuple;
  }
  throw DatasetTooSparseError(
      "sample_tuple: could not place the extra negative after retries");
}

AdamState AdamState::zeros_like(const EncoderParams& p) {
  AdamState s;
  for (const auto& w : p.weights) {
    s.m_w.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    s.v_w.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  }
  for (const auto& b : p.biases) {
    s.m_b.push_back(Eigen::VectorXd::Zero(b.size()));
    s.v_b.push_back(Eigen::VectorXd::Zero(b.size()));
  }
  return s;
}

void adam_step(EncoderParams& params, const EncoderGrads& grads, AdamState& opt,
               double lr) {
  if (grads.weights.size() != params.weights.size() ||
      grads.biases.size() != params.biases.size() ||
      opt.m_w.size() != params.weights.size()) {
    throw InvalidInputError("adam_step: shape mismatch");
  }
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);

  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = opt.beta1 * m + (1.0 - opt.beta1) * grad;
    v = opt.beta2 * v + (1.0 - opt.beta2) * grad.cwiseProduct(grad);
    param -=
        (lr * (m / bc1).array() / ((v / bc2).array().sqrt() + opt.eps)).matrix();
  };
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    update(params.weights[l], grads.weights[l], opt.m_w[l], opt.v_w[l]);
    update(params.biases[l], grads.biases[l], opt.m_b[l], opt.v_b[l]);
  }
}

PreparedTuple prepare_tuple(const TrainingTuple& tuple, const TrainConfig& cfg,
                            std::uint64_t seed) {
  PreparedTuple out;
  out.num_positives = tuple.positives.size();
  out.num_negatives = tuple.negatives.size();

  std::vector<const Sample*> members;
  members.push_back(&tuple.anchor);
  for (const auto& s : tuple.positives) {
    members.push_back(&s);
  }
  for (const auto& s : tuple.negatives) {
    members.push_back(&s);
  }
  members.push_back(&tuple.other_negative);

  // load + training preprocessing (ground removal, voxel filter, cap)
  for (std::size_t i = 0; i < members.size(); ++i) {
    const std::uint64_t s = mix_seed(seed, i);
    PointCloud c = load_sample_cloud(*members[i]);
    c = remove_ground_ransac(c, cfg.ground_dist_thresh, cfg.ground_max_iters,
                             mix_seed(s, 1));
    c = voxel_downsample(c, cfg.voxel_size);
    c = cap_points(c, cfg.max_points, mix_seed(s, 2));
    if (c.empty()) {
      throw InvalidInputError("prepare_tuple: preprocessing left an empty cloud");
    }
    out.clouds.push_back(std::move(c));
  }

  // Correspondences come from the ground-truth-pose alignment of the capped
  // clouds, before augmentation perturbs the geometry; point indices stay
  // valid because augmentation preserves order.
  if (cfg.joint.omega > 0.0) {
    const std::size_t sets = cfg.local_loss_both_positives
                                 ? std::min<std::size_t>(2, out.num_positives)
                                 : 1;
    for (std::size_t k = 0; k < sets; ++k) {
      CorrespondenceSet c12 = find_correspondences(
          out.clouds[0], out.clouds[1 + k], tuple.anchor.pose,
          tuple.positives[k].pose, cfg.corr_radius, cfg.use_icp);
      c12 = sample_correspondences(c12, cfg.corr_sample, mix_seed(seed, 100 + k));
      if (c12.empty()) {
        out.skipped = true;
      }
      out.correspondences.push_back(std::move(c12));
    }
  }

  for (std::size_t i = 0; i < out.clouds.size(); ++i) {
    const std::uint64_t s = mix_seed(seed, i);
    out.clouds[i] =
        augment_jitter(out.clouds[i], cfg.jitter_sigma, cfg.jitter_clip, mix_seed(s, 3));
    std::mt19937_64 rot_rng(mix_seed(s, 4));
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    out.clouds[i] = augment_rotate_z(out.clouds[i], angle(rot_rng));
  }
  return out;
}

namespace {

struct TupleForward {
  std::vector<std::vector<PointDescriptorInput>> inputs;
  std::vector<FeatureMap> features;
  std::vector<GlobalDescriptor> descriptors;
  double lg = 0.0;
  double llc = 0.0;
  QuadrupletResult quad;
  std::vector<LocalLossResult> local;  // one per correspondence set
};

TupleForward tuple_forward(const PreparedTuple& prepared,
                           const EncoderParams& params, const TrainConfig& cfg,
                           std::uint64_t seed, bool need_grads) {
  TupleForward fwd;
  const std::size_t n = prepared.clouds.size();
  fwd.inputs.reserve(n);
  fwd.features.reserve(n);
  fwd.descriptors.reserve(n);
  for (const auto& cloud : prepared.clouds) {
    fwd.inputs.push_back(
        build_inputs(cloud, params.neighborhood_k, params.normalize_intensity));
    fwd.features.push_back(encode_inputs(fwd.inputs.back(), params));
    fwd.descriptors.push_back(aggregate(fwd.features.back(), cfg.epn_alpha));
  }

  const std::size_t p = prepared.num_positives;
  const std::size_t q = prepared.num_negatives;
  const std::vector<GlobalDescriptor> positives(fwd.descriptors.begin() + 1,
                                                fwd.descriptors.begin() + 1 + p);
  const std::vector<GlobalDescriptor> negatives(
      fwd.descriptors.begin() + 1 + static_cast<std::ptrdiff_t>(p),
      fwd.descriptors.begin() + 1 + static_cast<std::ptrdiff_t>(p + q));
  fwd.quad = quadruplet_loss(fwd.descriptors[0], positives, negatives,
                             fwd.descriptors[1 + p + q], cfg.quad);
  fwd.lg = fwd.quad.loss;

  if (cfg.joint.omega > 0.0 && !prepared.correspondences.empty()) {
    double total = 0.0;
    for (std::size_t k = 0; k < prepared.correspondences.size(); ++k) {
      LocalLossResult res = hardest_contrastive_loss(
          fwd.features[0], fwd.features[1 + k], prepared.correspondences[k],
          cfg.local, mix_seed(seed, 200 + k));
      total += res.loss;
      if (need_grads) {
        fwd.local.push_back(std::move(res));
      }
    }
    fwd.llc = total / static_cast<double>(prepared.correspondences.size());
  }
  return fwd;
}

}  // namespace

TupleEval eval_tuple(const PreparedTuple& prepared, const EncoderParams& params,
                     const TrainConfig& cfg, std::uint64_t seed) {
  TupleForward fwd = tuple_forward(prepared, params, cfg, seed, true);

  TupleEval out;
  out.lg = fwd.lg;
  out.llc = fwd.llc;
  out.joint = joint_loss_value(fwd.lg, fwd.llc, cfg.joint);
  out.grads = EncoderGrads::zeros_like(params);

  const std::size_t n = prepared.clouds.size();
  const std::size_t p = prepared.num_positives;
  const std::size_t q = prepared.num_negatives;
  const double local_scale =
      prepared.correspondences.empty()
          ? 0.0
          : cfg.joint.omega / static_cast<double>(prepared.correspondences.size());

  for (std::size_t i = 0; i < n; ++i) {
    // descriptor-level gradient of the scene loss
    const Eigen::VectorXd* gdesc = nullptr;
    if (i == 0) {
      gdesc = &fwd.quad.grad_anchor;
    } else if (i < 1 + p) {
      gdesc = &fwd.quad.grad_positives[i - 1];
    } else if (i < 1 + p + q) {
      gdesc = &fwd.quad.grad_negatives[i - 1 - p];
    } else {
      gdesc = &fwd.quad.grad_other_negative;
    }

    Eigen::MatrixXd feat_grad = Eigen::MatrixXd::Zero(
        fwd.features[i].features.rows(), fwd.features[i].features.cols());
    if (gdesc->size() > 0 && !gdesc->isZero(0.0)) {
      feat_grad = aggregate_backward(fwd.features[i], *gdesc, cfg.epn_alpha);
    }
    for (std::size_t k = 0; k < fwd.local.size(); ++k) {
      if (i == 0) {
        feat_grad += local_scale * fwd.local[k].grad_f1;
      } else if (i == 1 + k) {
        feat_grad += local_scale * fwd.local[k].grad_f2;
      }
    }

    if (!feat_grad.isZero(0.0)) {
      const EncoderGrads g = encode_inputs_backward(fwd.inputs[i], params, feat_grad);
      out.grads.add_scaled(g, 1.0);
    }
  }
  return out;
}

double eval_tuple_loss(const PreparedTuple& prepared, const EncoderParams& params,
                       const TrainConfig& cfg, std::uint64_t seed) {
  const TupleForward fwd = tuple_forward(prepared, params, cfg, seed, false);
  return joint_loss_value(fwd.lg, fwd.llc, cfg.joint);
}

StepResult train_step(const TrainingTuple& tuple, EncoderParams& params,
                      AdamState& opt, const TrainConfig& cfg, double lr,
                      std::uint64_t seed) {
  const PreparedTuple prepared = prepare_tuple(tuple, cfg, seed);
  if (prepared.skipped) {
    return {0.0, 0.0, 0.0, true};
  }
  const TupleEval eval = eval_tuple(prepared, params, cfg, mix_seed(seed, 7));
  adam_step(params, eval.grads, opt, lr);
  return {eval.lg, eval.llc, eval.joint, false};
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string format_train_log(const TrainLog& log) {
  std::ostringstream out;
  for (const auto& e : log.epochs) {
    out << "epoch=" << e.epoch << " steps=" << e.steps << " lg=" << fmt17(e.mean_lg)
        << " llc=" << fmt17(e.mean_llc) << " joint=" << fmt17(e.mean_joint)
        << " lr=" << fmt17(e.lr) << " skipped=" << e.skipped << '\n';
  }
  return out.str();
}

void save_train_log(const std::string& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot open training log for writing: " + path);
  }
  out << format_train_log(log);
  if (!out) {
    throw IoError("write failure on training log: " + path);
  }
}

TrainResult train_loop(const std::vector<Sample>& dataset, const TrainConfig& cfg,
                       const std::string& checkpoint_dir, const Checkpoint* resume,
                       const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();

  TrainResult result;
  int start_epoch = 0;
  if (resume != nullptr) {
    result.params = resume->params;
    validate_params(result.params);
    result.opt = AdamState::zeros_like(result.params);
    if (resume->has_adam) {
      result.opt.m_w = resume->adam_m_w;
      result.opt.v_w = resume->adam_v_w;
      result.opt.m_b = resume->adam_m_b;
      result.opt.v_b = resume->adam_v_b;
      result.opt.step = resume->step;
    }
    start_epoch = resume->epoch;
  } else {
    result.params = init_encoder_params(cfg.feature_dim, cfg.neighborhood_k,
                                        mix_seed(cfg.seed, 0x1217));
    result.params.normalize_intensity = cfg.normalize_intensity;
    result.opt = AdamState::zeros_like(result.params);
  }

  const std::size_t tuples_per_epoch = (dataset.size() + 3) / 4;
  const auto batch = static_cast<std::size_t>(cfg.batch_tuples);

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at_epoch(epoch);
    EpochRecord record;
    record.epoch = epoch;
    record.lr = lr;

    EncoderGrads acc = EncoderGrads::zeros_like(result.params);
    std::size_t in_batch = 0;
    auto flush = [&]() {
      if (in_batch == 0) {
        return;
      }
      acc.scale(1.0 / static_cast<double>(in_batch));
      adam_step(result.params, acc, result.opt, lr);
      acc = EncoderGrads::zeros_like(result.params);
      in_batch = 0;
    };

    for (std::size_t t = 0; t < tuples_per_epoch; ++t) {
      const std::uint64_t tuple_seed =
          mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), 1000 + t);
      const TrainingTuple tuple = sample_tuple(dataset, cfg, tuple_seed);
      const PreparedTuple prepared =
          prepare_tuple(tuple, cfg, mix_seed(tuple_seed, 2));
      if (prepared.skipped) {
        record.skipped += 1;
        continue;
      }
      const TupleEval eval =
          eval_tuple(prepared, result.params, cfg, mix_seed(tuple_seed, 3));
      acc.add_scaled(eval.grads, 1.0);
      in_batch += 1;
      record.steps += 1;
      record.mean_lg += eval.lg;
      record.mean_llc += eval.llc;
      record.mean_joint += eval.joint;
      result.steps_done += 1;
      if (in_batch == batch) {
        flush();
      }
    }
    flush();

    if (record.steps > 0) {
      const double inv = 1.0 / static_cast<double>(record.steps);
      record.mean_lg *= inv;
      record.mean_llc *= inv;
      record.mean_joint *= inv;
    }
    result.log.epochs.push_back(record);
    if (on_epoch) {
      on_epoch(record);
    }

    if (!checkpoint_dir.empty()) {
      Checkpoint ckpt;
      ckpt.params = result.params;
      ckpt.step = result.opt.step;
      ckpt.epoch = epoch + 1;
      ckpt.has_adam = true;
      ckpt.adam_m_w = result.opt.m_w;
      ckpt.adam_v_w = result.opt.v_w;
      ckpt.adam_m_b = result.opt.m_b;
      ckpt.adam_v_b = result.opt.v_b;
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%04d.ckpt", epoch);
      namespace fs = std::filesystem;
      fs::create_directories(checkpoint_dir);
      save_checkpoint((fs::path(checkpoint_dir) / name).string(), ckpt);
    }
  }
  return result;
}

std::vector<DbEntry> describe_samples(const std::vector<Sample>& samples,
                                      const EncoderParams& params,
                                      const TrainConfig& cfg,
                                      std::vector<StageTiming>* timings,
                                      double timing_exclusion_time) {
  validate_params(params);
  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };

  std::vector<DbEntry> entries;
  entries.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    StageTiming st;

    auto t0 = clock::now();
    PointCloud cloud = load_sample_cloud(samples[i]);
    cloud = voxel_downsample(cloud, cfg.voxel_size);
    cloud = cap_points(cloud, cfg.max_points, mix_seed(cfg.seed, i, 0xCA9));
    st.preprocess_ms = ms_since(t0);

    t0 = clock::now();
    DbEntry entry;
    entry.descriptor = aggregate(encode(cloud, params), cfg.epn_alpha);
    entry.pose = samples[i].pose;
    entry.timestamp = samples[i].timestamp;
    entry.index = i;
    st.describe_ms = ms_since(t0);

    if (timings != nullptr) {
      t0 = clock::now();
      (void)query_top1(entries, entry, timing_exclusion_time);
      st.query_ms = ms_since(t0);
      timings->push_back(st);
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

AblationReport run_ablation(const std::vector<Sample>& train,
                            const std::vector<Sample>& eval,
                            const std::vector<double>& omegas,
                            const TrainConfig& base_cfg, const EvalConfig& eval_cfg,
                            const std::vector<std::uint64_t>& seeds,
                            int parallelism) {
  if (omegas.empty()) {
    throw InvalidInputError("run_ablation: omegas must be non-empty");
  }
  if (seeds.empty()) {
    throw InvalidInputError("run_ablation: seeds must be non-empty");
  }
  eval_cfg.validate();

  struct Job {
    std::size_t row;
    std::size_t seed_slot;
  };
  std::vector<Job> jobs;
  for (std::size_t r = 0; r < omegas.size(); ++r) {
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      jobs.push_back({r, s});
    }
  }

  AblationReport report;
  report.seeds = seeds;
  report.rows.resize(omegas.size());
  for (std::size_t r = 0; r < omegas.size(); ++r) {
    report.rows[r].omega = omegas[r];
    report.rows[r].f1max_per_seed.resize(seeds.size(), 0.0);
  }

  auto run_job = [&](const Job& job) {
    TrainConfig cfg = base_cfg;
    cfg.joint.omega = omegas[job.row];
    cfg.seed = seeds[job.seed_slot];
    const TrainResult trained = train_loop(train, cfg);
    const auto entries = describe_samples(eval, trained.params, cfg);
    const PrCurve curve = evaluate_sequence(entries, eval_cfg);
    return curve.f1max;
  };

  std::size_t workers = parallelism > 0
                            ? static_cast<std::size_t>(parallelism)
                            : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, jobs.size());

  if (workers <= 1) {
    for (const Job& job : jobs) {
      report.rows[job.row].f1max_per_seed[job.seed_slot] = run_job(job);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> futures;
    futures.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      futures.push_back(std::async(std::launch::async, [&]() {
        while (true) {
          const std::size_t j = next.fetch_add(1);
          if (j >= jobs.size()) {
            return;
          }
          report.rows[jobs[j].row].f1max_per_seed[jobs[j].seed_slot] =
              run_job(jobs[j]);
        }
      }));
    }
    for (auto& f : futures) {
      f.get();  // rethrows job exceptions
    }
  }

  for (auto& row : report.rows) {
    double sum = 0.0;
    for (double v : row.f1max_per_seed) {
      sum += v;
    }
    row.mean_f1max = sum / static_cast<double>(row.f1max_per_seed.size());
  }
  return report;
}

std::string format_ablation_report(const AblationReport& report) {
  std::ostringstream out;
  out << "# omega ablation: F1max on the held-out sequence\n";
  out << "# seeds:";
  for (auto s : report.seeds) {
    out << ' ' << s;
  }
  out << '\n';
  out << "# loss | omega | per-seed f1max | mean\n";
  for (const auto& row : report.rows) {
    std::ostringstream label;
    if (row.omega == 0.0) {
      label << "Lg";
    } else {
      label << "Lg + " << row.omega << "*Llc";
    }
    out << label.str() << " | " << row.omega << " |";
    for (double v : row.f1max_per_seed) {
      out << ' ' << fmt17(v);
    }
    out << " | " << fmt17(row.mean_f1max) << '\n';
  }
  return out.str();
}

}  // namespace lpr
