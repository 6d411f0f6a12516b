#include "cil/metrics.hpp"

#include <algorithm>

namespace cil {

double avg_incremental_accuracy(const MetricsLog& log) {
    if (log.overall.empty()) throw std::runtime_error("avg_incremental_accuracy: empty log");
    double s = 0;
    for (double v : log.overall) s += v;
    return s / static_cast<double>(log.overall.size());
}

double avg_forgetting(const MetricsLog& log) {
    const int n = log.phases();
    if (n < 2) throw std::runtime_error("avg_forgetting: undefined for fewer than 2 phases");
    double s = 0;
    for (int j = 0; j + 1 < n; ++j) {
        double best = 0;
        bool first = true;
        for (int l = j; l + 1 < n; ++l) {
            double a = log.acc.at(l).at(j);
            if (first || a > best) best = a, first = false;
        }
        s += best - log.acc.at(n - 1).at(j);
    }
    return s / static_cast<double>(n - 1);
}

}  // namespace cil
