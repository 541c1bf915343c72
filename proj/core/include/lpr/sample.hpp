#pragma once

#include <string>

#include "lpr/types.hpp"

namespace lpr {

// One dataset element: a scan (on disk or in memory) with its geo-location.
struct Sample {
  std::string cloud_path;  // when set, the scan is loaded from disk on use
  PointCloud cloud;
  Pose pose;
  double timestamp = 0.0;
  int sequence_id = 0;
};

PointCloud load_sample_cloud(const Sample& s);

}  // namespace lpr
