#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lpr/aggregation.hpp"
#include "lpr/types.hpp"

namespace lpr {

struct DbEntry {
  GlobalDescriptor descriptor;
  Pose pose;
  double timestamp = 0.0;
  std::size_t index = 0;
};

struct EvalConfig {
  double exclusion_time = 30.0;  // t_r, seconds
  double revisit_pos = 3.0;      // metres: closer is a true revisit
  double revisit_amb = 20.0;     // metres: farther is a definite non-revisit

  void validate() const {
    if (exclusion_time <= 0.0) {
      throw ConfigError("eval: exclusion_time must be positive");
    }
    if (revisit_pos >= revisit_amb) {
      throw ConfigError("eval: revisit_pos must be below revisit_amb");
    }
    if (revisit_pos <= 0.0) {
      throw ConfigError("eval: revisit_pos must be positive");
    }
  }
};

struct Retrieval {
  std::size_t entry_index = 0;
  double distance = 0.0;
};

// Minimum-descriptor-distance entry among those at least `exclusion_time`
// older than the query; nullopt when no entry qualifies. Distance ties break
// toward the lowest index.
std::optional<Retrieval> query_top1(const std::vector<DbEntry>& db,
                                    const DbEntry& query, double exclusion_time);

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;  // threshold ascending
  double f1max = 0.0;
  bool no_revisits = false;  // no query had an eligible true revisit
  std::size_t queries = 0;       // queries with a retrievable database
  std::size_t gt_positives = 0;  // of those, queries with a true revisit
};

// Streams the time-ordered entries as queries against the database of their
// predecessors and sweeps the decision threshold over every observed top-1
// distance. Per query: predicted-positive iff top-1 distance < threshold;
// true positive iff the retrieved entry is within revisit_pos of the query
// pose; false positive iff beyond revisit_amb; retrievals in between are
// ambiguous and excluded from the counts. Ground truth for recall is the
// existence of any eligible entry within revisit_pos.
PrCurve evaluate_sequence(const std::vector<DbEntry>& entries,
                          const EvalConfig& cfg);

// Renders / parses the plot-ready text form: one "threshold precision recall"
// row per point plus a trailing summary line.
std::string format_pr_curve(const PrCurve& curve);
PrCurve parse_pr_curve(const std::string& text);

// Wall-clock per entry for each pipeline stage, in ms.
struct StageTiming {
  double preprocess_ms = 0.0;
  double describe_ms = 0.0;
  double query_ms = 0.0;
};

struct TimingReport {
  std::size_t entries = 0;
  double mean_preprocess_ms = 0.0;
  double mean_describe_ms = 0.0;
  double mean_query_ms = 0.0;
  double mean_total_ms = 0.0;
};

TimingReport timing_report(const std::vector<StageTiming>& stages);
std::string format_timing_report(const TimingReport& report);

}  // namespace lpr
