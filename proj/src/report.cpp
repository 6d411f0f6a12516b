#include <fstream>
#include <iomanip>

#include "cil/metrics.hpp"
#include "cil/runner.hpp"

namespace cil {

using nlohmann::json;

void write_metrics_files(const MetricsLog& log, const json& config_echo,
                         const std::string& out_dir) {
    const int n = log.phases();
    json j;
    j["config"] = config_echo;
    j["overall_accuracy"] = log.overall;
    j["accuracy_matrix"] = log.acc;
    j["avg_incremental_accuracy"] = avg_incremental_accuracy(log);
    j["avg_forgetting"] = n >= 2 ? json(avg_forgetting(log)) : json(nullptr);
    json pc = json::array();
    for (const auto& m : log.per_class) {
        json row = json::object();
        for (auto& [c, a] : m) row[std::to_string(c)] = a;
        pc.push_back(row);
    }
    j["per_class_accuracy"] = pc;

    std::ofstream jf(out_dir + "/metrics.json");
    if (!jf) throw std::runtime_error("cannot write " + out_dir + "/metrics.json");
    jf << j.dump(2) << "\n";

    std::ofstream cf(out_dir + "/metrics.csv");
    if (!cf) throw std::runtime_error("cannot write " + out_dir + "/metrics.csv");
    cf << "phase,overall_acc";
    for (int t = 0; t < n; ++t) cf << ",task" << (t + 1) << "_acc";
    cf << ",avg_inc_acc,avg_forgetting\n";
    cf << std::setprecision(17);
    for (int k = 0; k < n; ++k) {
        cf << (k + 1) << ',' << log.overall[k];
        for (int t = 0; t < n; ++t) {
            cf << ',';
            if (t < static_cast<int>(log.acc[k].size())) cf << log.acc[k][t];
        }
        MetricsLog upto;
        upto.overall.assign(log.overall.begin(), log.overall.begin() + k + 1);
        upto.acc.assign(log.acc.begin(), log.acc.begin() + k + 1);
        cf << ',' << avg_incremental_accuracy(upto) << ',';
        if (k >= 1) cf << avg_forgetting(upto);
        cf << '\n';
    }
}

}  // namespace cil
