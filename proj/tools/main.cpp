#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "cil/runner.hpp"

namespace {

using namespace cil;

template <typename T>
int run_train(const RunConfig& rc) {
    auto st = run_from_config<T>(rc, true);
    std::cout << "phases: " << st.log.phases()
              << "  avg_inc_acc: " << avg_incremental_accuracy(st.log);
    if (st.log.phases() >= 2) std::cout << "  avg_forgetting: " << avg_forgetting(st.log);
    std::cout << "\nmetrics written to " << rc.output_dir << "\n";
    return 0;
}

template <typename T>
int run_fuse_check(const std::string& path, int trials, double tol) {
    Model<T> model = load_checkpoint<T>(path);
    if (!model.backbone.expanded()) {
        std::cerr << "fuse-check: checkpoint has no adapters (already fused?)\n";
        return 2;
    }
    Backbone<T> fused = clone_detached(model.backbone);
    fused.fuse_all();

    const auto& cfg = model.backbone.config();
    std::mt19937 rng(1234);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    double max_dev = 0;
    for (int t = 0; t < trials; ++t) {
        Tensor<T> x(Shape{2, cfg.in_channels, 16, 16});
        for (auto& v : x.data()) v = static_cast<T>(dist(rng));
        Tensor<T> a = model.backbone.features_eval(x);
        Tensor<T> b = fused.features_eval(x);
        for (size_t i = 0; i < a.numel(); ++i)
            max_dev = std::max(max_dev, std::abs(static_cast<double>(a.data()[i] - b.data()[i])));
    }
    std::cout << "trials: " << trials << "  max_abs_deviation: " << max_dev
              << "  tolerance: " << tol << "\n";
    if (max_dev > tol) {
        std::cerr << "fuse-check: deviation above tolerance\n";
        return 1;
    }
    return 0;
}

template <typename T>
int run_sweep(const RunConfig& base, const std::vector<double>& values) {
    std::ostringstream csv;
    csv << "sigma,avg_inc_acc\n";
    for (double s : values) {
        RunConfig rc = base;
        rc.sigma = s;
        std::ostringstream dir;
        dir << base.output_dir << "/sigma_" << s;
        rc.output_dir = dir.str();
        auto st = run_from_config<T>(rc, true);
        csv << s << ',' << avg_incremental_accuracy(st.log) << '\n';
    }
    std::cout << csv.str();
    std::filesystem::create_directories(base.output_dir);
    std::ofstream f(base.output_dir + "/sigma_sweep.csv");
    f << csv.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"class-incremental training with expandable, re-fusable conv blocks"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;

    auto* train = app.add_subcommand("train", "run the full phase protocol");
    train->add_option("--config", config_path, "JSON config file")->required();
    train->add_option("--set", overrides, "key=value config overrides");

    std::string ckpt_path;
    int trials = 100;
    double tol = -1;
    auto* fusecheck =
        app.add_subcommand("fuse-check", "verify expanded vs fused forward equivalence");
    fusecheck->add_option("--checkpoint", ckpt_path, "expanded checkpoint file")->required();
    fusecheck->add_option("--trials", trials, "number of random inputs");
    fusecheck->add_option("--tol", tol, "max allowed deviation (default per precision)");

    std::string values_str;
    auto* sweep = app.add_subcommand("sweep-sigma", "run the protocol per sigma value");
    sweep->add_option("--config", config_path, "JSON config file")->required();
    sweep->add_option("--values", values_str, "comma-separated sigma values")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(train)) {
            cil::RunConfig rc = cil::RunConfig::load(config_path);
            for (const auto& kv : overrides) rc.apply_override(kv);
            return rc.precision == "f64" ? run_train<double>(rc) : run_train<float>(rc);
        }
        if (app.got_subcommand(fusecheck)) {
            // peek at the stored scalar width to pick the precision
            auto bytes = cil::read_file_bytes(ckpt_path);
            if (bytes.size() < 13) throw std::runtime_error("checkpoint: truncated file");
            uint8_t scalar = bytes[12];
            if (scalar == 8)
                return run_fuse_check<double>(ckpt_path, trials, tol > 0 ? tol : 1e-10);
            return run_fuse_check<float>(ckpt_path, trials, tol > 0 ? tol : 1e-5);
        }
        if (app.got_subcommand(sweep)) {
            cil::RunConfig rc = cil::RunConfig::load(config_path);
            std::vector<double> values;
            std::stringstream ss(values_str);
            std::string tok;
            while (std::getline(ss, tok, ',')) values.push_back(std::stod(tok));
            if (values.empty()) throw cil::config_error("sweep-sigma: no values given");
            return rc.precision == "f64" ? run_sweep<double>(rc, values)
                                         : run_sweep<float>(rc, values);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
