#pragma once

#include "kle3/types.hpp"

#include <map>
#include <string>
#include <vector>

namespace kle3 {

/// One control period of an experiment trace.
struct StepRow {
  double t = 0.0;
  Vec x;
  Vec u;
  double V = 0.0;
  double objective = std::numeric_limits<double>::quiet_NaN();
  double beta = std::numeric_limits<double>::quiet_NaN();
  double tau = std::numeric_limits<double>::quiet_NaN();
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double best_y = std::numeric_limits<double>::quiet_NaN();
};

struct RunRecord {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<StepRow> rows;
  std::map<std::string, double> metrics;
  bool aborted = false;
  std::string abort_reason;

  [[nodiscard]] double metric(const std::string& key) const {
    const auto it = metrics.find(key);
    require(it != metrics.end(), "run record: no metric '" + key + "'");
    return it->second;
  }
  [[nodiscard]] double max_V() const {
    double m = 0.0;
    for (const auto& r : rows) m = std::max(m, r.V);
    return m;
  }
};

}  // namespace kle3
