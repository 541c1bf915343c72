#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpr/retrieval.hpp"
#include "lpr/synthdata.hpp"
#include "lpr/training.hpp"

namespace lpr {

// Flat key=value run configuration. Unknown keys are rejected; every value is
// validated against the owning module's invariants at load time.
struct RunConfig {
  TrainConfig train;
  EvalConfig eval;
  std::vector<std::uint64_t> seeds = {0};

  // synthetic data generation
  std::uint64_t world_seed = 0;
  WorldConfig world;
  TrajectorySpec trajectory;  // empty waypoints: use the default loop
  double sensor_range = 30.0;
  double scan_noise_sigma = 0.01;

  // paths
  std::string dataset_dir;
  std::string eval_dataset_dir;
  std::string output_dir;
  std::string checkpoint;
  std::string descriptor_file;
  std::string labels_file;

  // ablation
  std::vector<double> omegas = {0.0, 0.1, 1.0};

  void validate() const;
};

// Parses "key = value" lines ('#' starts a comment). Throws ConfigError on
// unknown keys or invalid values.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

// The default square-loop trajectory with one retraced segment, sized to the
// world extent; used when no waypoints are configured.
TrajectorySpec default_trajectory(const WorldConfig& world);

}  // namespace lpr
