#include "lpr/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace lpr {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) {
    return "";
  }
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) {
      throw std::invalid_argument("trailing");
    }
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' has non-numeric value '" + value + "'");
  }
}

long long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) {
      throw std::invalid_argument("trailing");
    }
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' has non-integer value '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "0" || value == "false") {
    return false;
  }
  if (value == "1" || value == "true") {
    return true;
  }
  throw ConfigError("config: key '" + key + "' expects 0/1, got '" + value + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    parts.push_back(trim(cur));
  }
  return parts;
}

// "x,y,z;x,y,z;..." (z optional, defaults to 0)
std::vector<Eigen::Vector3d> parse_waypoints(const std::string& value) {
  std::vector<Eigen::Vector3d> out;
  for (const auto& part : split(value, ';')) {
    if (part.empty()) {
      continue;
    }
    const auto coords = split(part, ',');
    if (coords.size() != 2 && coords.size() != 3) {
      throw ConfigError("config: waypoint '" + part + "' needs 2 or 3 coordinates");
    }
    Eigen::Vector3d w(parse_real("waypoints", coords[0]),
                      parse_real("waypoints", coords[1]),
                      coords.size() == 3 ? parse_real("waypoints", coords[2]) : 0.0);
    out.push_back(w);
  }
  return out;
}

// "first:last[:rev]" items separated by commas
std::vector<RevisitSegment> parse_revisits(const std::string& value) {
  std::vector<RevisitSegment> out;
  for (const auto& part : split(value, ',')) {
    if (part.empty()) {
      continue;
    }
    const auto fields = split(part, ':');
    if (fields.size() != 2 && fields.size() != 3) {
      throw ConfigError("config: revisit segment '" + part +
                        "' must be first:last[:rev]");
    }
    RevisitSegment seg;
    seg.first = static_cast<std::size_t>(parse_int("revisit_segments", fields[0]));
    seg.last = static_cast<std::size_t>(parse_int("revisit_segments", fields[1]));
    if (fields.size() == 3) {
      if (fields[2] != "rev") {
        throw ConfigError("config: revisit segment suffix must be 'rev'");
      }
      seg.reversed = true;
    }
    out.push_back(seg);
  }
  return out;
}

}  // namespace

TrajectorySpec default_trajectory(const WorldConfig& world) {
  TrajectorySpec traj;
  const double margin = std::max(10.0, world.extent * 0.15);
  const double lo = margin;
  const double hi = world.extent - margin;
  const double h = 1.6;  // sensor height
  traj.waypoints = {{lo, lo, h}, {hi, lo, h}, {hi, hi, h}, {lo, hi, h}, {lo, lo, h}};
  traj.speed = 2.0;
  traj.scan_period = 0.5;
  // retrace the first stretch of the loop at the end of the run
  traj.revisits = {{0, 40, false}};
  return traj;
}

void RunConfig::validate() const {
  train.validate();
  eval.validate();
  world.validate();
  if (seeds.empty()) {
    throw ConfigError("config: seeds must be non-empty");
  }
  if (omegas.empty()) {
    throw ConfigError("config: omegas must be non-empty");
  }
  if (sensor_range <= 0.0) {
    throw ConfigError("config: sensor_range must be positive");
  }
  if (scan_noise_sigma < 0.0) {
    throw ConfigError("config: scan_noise_sigma must be non-negative");
  }
  // trajectory is validated at generation time (waypoints may be defaulted)
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  cfg.trajectory.waypoints.clear();

  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": empty key or value");
    }

    auto& t = cfg.train;
    if (key == "voxel_size") {
      t.voxel_size = parse_real(key, value);
    } else if (key == "max_points") {
      t.max_points = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "ground_dist_thresh") {
      t.ground_dist_thresh = parse_real(key, value);
    } else if (key == "ground_max_iters") {
      t.ground_max_iters = static_cast<int>(parse_int(key, value));
    } else if (key == "jitter_sigma") {
      t.jitter_sigma = parse_real(key, value);
    } else if (key == "jitter_clip") {
      t.jitter_clip = parse_real(key, value);
    } else if (key == "feature_dim") {
      t.feature_dim = static_cast<int>(parse_int(key, value));
    } else if (key == "k") {
      t.neighborhood_k = static_cast<int>(parse_int(key, value));
    } else if (key == "normalize_intensity") {
      t.normalize_intensity = parse_bool(key, value);
    } else if (key == "r") {
      t.corr_radius = parse_real(key, value);
    } else if (key == "use_icp") {
      t.use_icp = parse_bool(key, value);
    } else if (key == "corr_sample") {
      t.corr_sample = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "m_p") {
      t.local.positive_margin = parse_real(key, value);
    } else if (key == "m_n") {
      t.local.negative_margin = parse_real(key, value);
    } else if (key == "lambda_n") {
      t.local.negative_weight = parse_real(key, value);
    } else if (key == "mining_size") {
      t.local.mining_size = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "local_loss_both_positives") {
      t.local_loss_both_positives = parse_bool(key, value);
    } else if (key == "alpha_q") {
      t.quad.alpha = parse_real(key, value);
    } else if (key == "beta_q") {
      t.quad.beta = parse_real(key, value);
    } else if (key == "num_negatives") {
      t.quad.num_negatives = static_cast<int>(parse_int(key, value));
    } else if (key == "num_positives") {
      t.quad.num_positives = static_cast<int>(parse_int(key, value));
    } else if (key == "omega") {
      t.joint.omega = parse_real(key, value);
    } else if (key == "epn_alpha") {
      t.epn_alpha = parse_real(key, value);
    } else if (key == "tau_p") {
      t.tau_positive = parse_real(key, value);
    } else if (key == "tau_n") {
      t.tau_negative = parse_real(key, value);
    } else if (key == "learning_rate") {
      t.learning_rate = parse_real(key, value);
    } else if (key == "lr_drop_factor") {
      t.lr_drop_factor = parse_real(key, value);
    } else if (key == "lr_drop_epoch") {
      t.lr_drop_epoch = static_cast<int>(parse_int(key, value));
    } else if (key == "epochs") {
      t.epochs = static_cast<int>(parse_int(key, value));
    } else if (key == "batch_tuples") {
      t.batch_tuples = static_cast<int>(parse_int(key, value));
    } else if (key == "seeds") {
      cfg.seeds.clear();
      for (const auto& s : split(value, ',')) {
        if (!s.empty()) {
          cfg.seeds.push_back(static_cast<std::uint64_t>(parse_int(key, s)));
        }
      }
    } else if (key == "t_r") {
      cfg.eval.exclusion_time = parse_real(key, value);
    } else if (key == "revisit_pos") {
      cfg.eval.revisit_pos = parse_real(key, value);
    } else if (key == "revisit_amb") {
      cfg.eval.revisit_amb = parse_real(key, value);
    } else if (key == "omegas") {
      cfg.omegas.clear();
      for (const auto& s : split(value, ',')) {
        if (!s.empty()) {
          cfg.omegas.push_back(parse_real(key, s));
        }
      }
    } else if (key == "world_seed") {
      cfg.world_seed = static_cast<std::uint64_t>(parse_int(key, value));
    } else if (key == "world_extent") {
      cfg.world.extent = parse_real(key, value);
    } else if (key == "num_clusters") {
      cfg.world.num_clusters = static_cast<int>(parse_int(key, value));
    } else if (key == "min_primitives_per_cluster") {
      cfg.world.min_primitives_per_cluster = static_cast<int>(parse_int(key, value));
    } else if (key == "max_primitives_per_cluster") {
      cfg.world.max_primitives_per_cluster = static_cast<int>(parse_int(key, value));
    } else if (key == "cluster_spread") {
      cfg.world.cluster_spread = parse_real(key, value);
    } else if (key == "boxes") {
      cfg.world.boxes = parse_bool(key, value);
    } else if (key == "cylinders") {
      cfg.world.cylinders = parse_bool(key, value);
    } else if (key == "walls") {
      cfg.world.walls = parse_bool(key, value);
    } else if (key == "ground") {
      cfg.world.ground = parse_bool(key, value);
    } else if (key == "ground_density") {
      cfg.world.ground_density = parse_real(key, value);
    } else if (key == "density_scale") {
      cfg.world.density_scale = parse_real(key, value);
    } else if (key == "sensor_range") {
      cfg.sensor_range = parse_real(key, value);
    } else if (key == "scan_noise_sigma") {
      cfg.scan_noise_sigma = parse_real(key, value);
    } else if (key == "waypoints") {
      cfg.trajectory.waypoints = parse_waypoints(value);
    } else if (key == "speed") {
      cfg.trajectory.speed = parse_real(key, value);
    } else if (key == "scan_period") {
      cfg.trajectory.scan_period = parse_real(key, value);
    } else if (key == "revisit_segments") {
      cfg.trajectory.revisits = parse_revisits(value);
    } else if (key == "pose_noise_trans") {
      cfg.trajectory.pose_noise_translation = parse_real(key, value);
    } else if (key == "pose_noise_yaw_deg") {
      cfg.trajectory.pose_noise_yaw_deg = parse_real(key, value);
    } else if (key == "label_radius") {
      cfg.trajectory.label_radius = parse_real(key, value);
    } else if (key == "label_min_time_gap") {
      cfg.trajectory.label_min_time_gap = parse_real(key, value);
    } else if (key == "dataset_dir") {
      cfg.dataset_dir = value;
    } else if (key == "eval_dataset_dir") {
      cfg.eval_dataset_dir = value;
    } else if (key == "output_dir") {
      cfg.output_dir = value;
    } else if (key == "checkpoint") {
      cfg.checkpoint = value;
    } else if (key == "descriptor_file") {
      cfg.descriptor_file = value;
    } else if (key == "labels_file") {
      cfg.labels_file = value;
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }

  if (!cfg.seeds.empty()) {
    cfg.train.seed = cfg.seeds.front();
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open config file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace lpr
