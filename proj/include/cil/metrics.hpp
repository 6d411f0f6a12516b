#pragma once

// Accuracy bookkeeping across phases and the two summary metrics.

#include <map>
#include <stdexcept>
#include <vector>

namespace cil {

struct MetricsLog {
    // acc[k][j] = accuracy on task-j test classes after phase k (j <= k); 0-based
    std::vector<std::vector<double>> acc;
    std::vector<double> overall;  // cumulative test accuracy after each phase
    // per_class[k] = class id -> accuracy after phase k
    std::vector<std::map<int, double>> per_class;

    int phases() const { return static_cast<int>(overall.size()); }
};

double avg_incremental_accuracy(const MetricsLog& log);

// At the final phase n: f_j = max_{l in [j, n-1]} acc[l][j] - acc[n-1][j],
// mean over tasks j in [0, n-2] (0-based). Requires >= 2 phases.
double avg_forgetting(const MetricsLog& log);

}  // namespace cil
