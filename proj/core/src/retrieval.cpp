#include "lpr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace lpr {

std::optional<Retrieval> query_top1(const std::vector<DbEntry>& db,
                                    const DbEntry& query, double exclusion_time) {
  std::optional<Retrieval> best;
  for (std::size_t i = 0; i < db.size(); ++i) {
    if (db[i].timestamp > query.timestamp - exclusion_time) {
      continue;
    }
    const double d = (db[i].descriptor.values - query.descriptor.values).norm();
    if (!best || d < best->distance) {
      best = Retrieval{i, d};
    }
  }
  return best;
}

namespace {

// Everything needed to classify one query at any threshold.
struct QueryOutcome {
  double score = 0.0;     // top-1 descriptor distance
  bool gt_positive = false;
  // geometric zone of the retrieved entry
  bool retrieved_close = false;  // < revisit_pos
  bool retrieved_far = false;    // > revisit_amb
};

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts classify(const std::vector<QueryOutcome>& outcomes, double threshold) {
  Counts c;
  for (const auto& q : outcomes) {
    const bool predicted = q.score < threshold;
    if (predicted) {
      if (q.retrieved_close) {
        ++c.tp;
      } else if (q.retrieved_far) {
        ++c.fp;
      }
      // ambiguous zone: excluded
    } else {
      if (q.gt_positive) {
        ++c.fn;
      } else {
        ++c.tn;
      }
    }
  }
  return c;
}

}  // namespace

PrCurve evaluate_sequence(const std::vector<DbEntry>& entries,
                          const EvalConfig& cfg) {
  cfg.validate();
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].timestamp < entries[i - 1].timestamp) {
      throw InvalidInputError("evaluate_sequence: entries must be time-ordered");
    }
  }

  std::vector<QueryOutcome> outcomes;
  std::size_t gt_total = 0;
  std::vector<DbEntry> db;
  db.reserve(entries.size());

  for (const auto& entry : entries) {
    const auto top1 = query_top1(db, entry, cfg.exclusion_time);
    if (top1) {
      QueryOutcome q;
      q.score = top1->distance;
      for (const auto& prior : db) {
        if (prior.timestamp > entry.timestamp - cfg.exclusion_time) {
          continue;
        }
        if ((prior.pose.translation - entry.pose.translation).norm() <
            cfg.revisit_pos) {
          q.gt_positive = true;
          break;
        }
      }
      const double geo =
          (db[top1->entry_index].pose.translation - entry.pose.translation).norm();
      q.retrieved_close = geo < cfg.revisit_pos;
      q.retrieved_far = geo > cfg.revisit_amb;
      gt_total += q.gt_positive ? 1 : 0;
      outcomes.push_back(q);
    }
    db.push_back(entry);
  }

  PrCurve curve;
  curve.queries = outcomes.size();
  curve.gt_positives = gt_total;
  if (outcomes.empty() || gt_total == 0) {
    curve.no_revisits = true;
    curve.f1max = 0.0;
    return curve;
  }

  std::vector<double> thresholds;
  thresholds.reserve(outcomes.size() + 2);
  for (const auto& q : outcomes) {
    thresholds.push_back(q.score);
  }
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());
  const double eps = 1e-9 * std::max(1.0, thresholds.back());
  thresholds.insert(thresholds.begin(), thresholds.front() - eps);
  thresholds.push_back(thresholds.back() + eps);

  for (double t : thresholds) {
    const Counts c = classify(outcomes, t);
    PrPoint pt;
    pt.threshold = t;
    // no predictions at all counts as vacuous full precision
    pt.precision = (c.tp + c.fp) > 0
                       ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp)
                       : 1.0;
    pt.recall = (c.tp + c.fn) > 0
                    ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn)
                    : 0.0;
    curve.points.push_back(pt);

    const double pr = pt.precision + pt.recall;
    const double f1 = pr > 0.0 ? 2.0 * pt.precision * pt.recall / pr : 0.0;
    curve.f1max = std::max(curve.f1max, f1);
  }
  return curve;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string format_pr_curve(const PrCurve& curve) {
  std::ostringstream out;
  out << "# threshold precision recall\n";
  for (const auto& p : curve.points) {
    out << fmt_double(p.threshold) << ' ' << fmt_double(p.precision) << ' '
        << fmt_double(p.recall) << '\n';
  }
  out << "# f1max=" << fmt_double(curve.f1max) << " queries=" << curve.queries
      << " gt_positives=" << curve.gt_positives
      << " no_revisits=" << (curve.no_revisits ? 1 : 0) << '\n';
  return out.str();
}

PrCurve parse_pr_curve(const std::string& text) {
  PrCurve curve;
  std::istringstream in(text);
  std::string line;
  bool saw_summary = false;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    if (line[0] == '#') {
      if (line.rfind("# f1max=", 0) == 0) {
        std::istringstream iss(line.substr(2));
        std::string tok;
        while (iss >> tok) {
          const auto eq = tok.find('=');
          if (eq == std::string::npos) {
            continue;
          }
          const std::string key = tok.substr(0, eq);
          const std::string val = tok.substr(eq + 1);
          if (key == "f1max") {
            curve.f1max = std::stod(val);
          } else if (key == "queries") {
            curve.queries = std::stoul(val);
          } else if (key == "gt_positives") {
            curve.gt_positives = std::stoul(val);
          } else if (key == "no_revisits") {
            curve.no_revisits = val != "0";
          }
        }
        saw_summary = true;
      }
      continue;
    }
    std::istringstream iss(line);
    PrPoint p;
    if (!(iss >> p.threshold >> p.precision >> p.recall)) {
      throw ParseError("pr curve: bad row: " + line);
    }
    curve.points.push_back(p);
  }
  if (!saw_summary) {
    throw ParseError("pr curve: missing summary line");
  }
  return curve;
}

TimingReport timing_report(const std::vector<StageTiming>& stages) {
  TimingReport rep;
  rep.entries = stages.size();
  if (stages.empty()) {
    return rep;
  }
  for (const auto& s : stages) {
    rep.mean_preprocess_ms += s.preprocess_ms;
    rep.mean_describe_ms += s.describe_ms;
    rep.mean_query_ms += s.query_ms;
    rep.mean_total_ms += s.preprocess_ms + s.describe_ms + s.query_ms;
  }
  const double inv = 1.0 / static_cast<double>(stages.size());
  rep.mean_preprocess_ms *= inv;
  rep.mean_describe_ms *= inv;
  rep.mean_query_ms *= inv;
  rep.mean_total_ms *= inv;
  return rep;
}

std::string format_timing_report(const TimingReport& report) {
  std::ostringstream out;
  out << "entries: " << report.entries << '\n';
  out << "stage        mean_ms\n";
  if (report.entries == 0) {
    return out.str();
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "preprocess   %.3f\n", report.mean_preprocess_ms);
  out << buf;
  std::snprintf(buf, sizeof(buf), "description  %.3f\n", report.mean_describe_ms);
  out << buf;
  std::snprintf(buf, sizeof(buf), "querying     %.3f\n", report.mean_query_ms);
  out << buf;
  std::snprintf(buf, sizeof(buf), "total        %.3f\n", report.mean_total_ms);
  out << buf;
  return out.str();
}

}  // namespace lpr
