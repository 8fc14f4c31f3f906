// Command-line front end: kernels, analytic posteriors, baselearner and
// ensemble training, evaluation, and the experiment recipes.

#include "ntkgp/config.hpp"
#include "ntkgp/csv.hpp"
#include "ntkgp/experiments.hpp"
#include "ntkgp/gp.hpp"
#include "ntkgp/kernels.hpp"
#include "ntkgp/serialize.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

using namespace ntkgp;

namespace {

struct GlobalOptions {
    std::string config_path;
    std::int64_t seed_override = -1;
    std::string out_override;

    ExperimentConfig load() const {
        ExperimentConfig cfg = config_path.empty()
                                   ? ExperimentConfig{}
                                   : ExperimentConfig::from_toml_file(config_path);
        if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
        if (!out_override.empty()) cfg.out_dir = out_override;
        cfg.ensemble.base_seed = cfg.seed;
        return cfg;
    }
};

PredictiveMethod parse_predictive(const std::string& s) {
    if (s == "nngp") return PredictiveMethod::nngp;
    if (s == "deep_ensemble") return PredictiveMethod::deep_ensemble;
    if (s == "randomised_prior" || s == "rp") return PredictiveMethod::randomised_prior;
    if (s == "ntkgp") return PredictiveMethod::ntkgp;
    throw CLI::ValidationError("method", "unknown predictive method: " + s);
}

int print_checks(const ExperimentReport& report) {
    for (const auto& c : report.checks)
        std::cout << (c.passed ? "[PASS] " : "[FAIL] ") << c.name << " (value "
                  << c.value << ", threshold " << c.threshold << ")\n";
    if (!report.all_passed()) {
        std::cout << "verification failed\n";
        return 1;
    }
    std::cout << "all checks passed\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian deep ensembles via the neural tangent kernel"};
    app.require_subcommand(1);
    app.fallthrough();  // global --config/--seed/--out may follow the subcommand

    GlobalOptions global;
    app.add_option("--config", global.config_path, "TOML config file");
    app.add_option("--seed", global.seed_override, "override the config seed");
    app.add_option("--out", global.out_override, "override the output directory");

    auto* kernel_cmd =
        app.add_subcommand("kernel", "write the analytic kernels on the toy grid as CSV");
    auto* posterior_cmd =
        app.add_subcommand("posterior", "write an analytic predictive law on the toy grid");
    std::string posterior_method = "ntkgp";
    double posterior_sigma2 = -1.0;
    posterior_cmd->add_option("--method", posterior_method,
                              "nngp | deep_ensemble | randomised_prior | ntkgp");
    posterior_cmd->add_option("--sigma2", posterior_sigma2,
                              "output-noise variance (default: config value)");

    auto* train_cmd = app.add_subcommand("train", "train one baselearner, save its bundle");
    int member_index = 0;
    train_cmd->add_option("--member", member_index, "member index k");

    auto* ensemble_cmd =
        app.add_subcommand("ensemble", "train the full ensemble, save bundles + manifest");
    auto* evaluate_cmd =
        app.add_subcommand("evaluate", "evaluate saved bundles on the toy grid");
    std::string manifest_path;
    evaluate_cmd->add_option("--manifest", manifest_path, "manifest.json from `ensemble`")
        ->required();

    auto* verify_cmd =
        app.add_subcommand("verify", "run the configured recipe's hard checks");
    auto* report_cmd =
        app.add_subcommand("report", "run the configured recipe and write all artifacts");
    bool report_svg = false;
    report_cmd->add_flag("--svg", report_svg, "also render SVG figures");

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig cfg = global.load();

        if (kernel_cmd->parsed()) {
            const auto t = toy_setup(cfg);
            std::filesystem::create_directories(cfg.out_dir);
            write_kernel_csv(cfg.out_dir + "/kernel_nngp.csv", cfg.digest(), cfg.seed,
                             t.x_grid, t.x_grid, t.nngp.test_test);
            write_kernel_csv(cfg.out_dir + "/kernel_ntk.csv", cfg.digest(), cfg.seed,
                             t.x_grid, t.x_grid, t.ntk.test_test);
            std::cout << "wrote " << cfg.out_dir << "/kernel_nngp.csv and kernel_ntk.csv\n";
            return 0;
        }

        if (posterior_cmd->parsed()) {
            const auto t = toy_setup(cfg);
            const double sigma2 =
                posterior_sigma2 >= 0.0 ? posterior_sigma2 : cfg.ensemble.sigma2;
            const GaussianPredictive p = predictive_table(
                parse_predictive(posterior_method), t.nngp, t.ntk, t.y_train.col(0), sigma2);
            std::filesystem::create_directories(cfg.out_dir);
            CsvWriter csv(cfg.out_dir + "/posterior_" + posterior_method + ".csv",
                          cfg.digest(), cfg.seed, {"x", "mean", "std"});
            for (Eigen::Index i = 0; i < t.x_grid.rows(); ++i)
                csv.row(t.x_grid(i, 0), p.mean[i], std::sqrt(std::max(p.cov(i, i), 0.0)));
            save_covariance(cfg.out_dir + "/posterior_" + posterior_method + "_cov.bin", p.cov);
            std::cout << "wrote posterior_" << posterior_method << ".csv (+ covariance binary)\n";
            return 0;
        }

        if (train_cmd->parsed() || ensemble_cmd->parsed()) {
            const auto t = toy_setup(cfg);
            std::filesystem::create_directories(cfg.out_dir);
            EnsembleSpec spec = cfg.ensemble;
            spec.base_seed = cfg.seed;
            const int first = train_cmd->parsed() ? member_index : 0;
            const int last = train_cmd->parsed() ? member_index + 1 : spec.size;
            nlohmann::json manifest;
            manifest["method"] = method_name(spec.method);
            manifest["size"] = last - first;
            manifest["base_seed"] = spec.base_seed;
            manifest["config_digest"] = cfg.digest();
            manifest["members"] = nlohmann::json::array();
            for (int k = first; k < last; ++k) {
                const TrainedBaselearner b = train_baselearner(spec, k, cfg.arch,
                                                               t.x_train, t.y_train);
                std::ostringstream name;
                name << "member_" << k << ".bin";
                save_baselearner(cfg.out_dir + "/" + name.str(), b);
                const double mse =
                    (b.predict_mean(t.x_train) - b.noisy_targets).array().square().mean();
                manifest["members"].push_back(
                    {{"index", k}, {"file", name.str()}, {"train_mse", mse}});
                std::cout << "member " << k << ": train mse " << mse << "\n";
            }
            std::ofstream mout(cfg.out_dir + "/manifest.json");
            mout << manifest.dump(2) << "\n";
            std::cout << "wrote " << cfg.out_dir << "/manifest.json\n";
            return 0;
        }

        if (evaluate_cmd->parsed()) {
            std::ifstream min(manifest_path);
            if (!min) throw std::runtime_error("cannot open manifest: " + manifest_path);
            nlohmann::json manifest;
            min >> manifest;
            const std::string dir =
                std::filesystem::path(manifest_path).parent_path().string();
            const auto t = toy_setup(cfg);
            std::vector<Vector> means, vars;
            for (const auto& m : manifest["members"]) {
                const std::string file =
                    (dir.empty() ? "" : dir + "/") + m["file"].get<std::string>();
                const TrainedBaselearner b = load_baselearner(file);
                means.push_back(b.predict_mean(t.x_grid).col(0));
                vars.push_back(b.predict_variance(t.x_grid));
            }
            const auto [mu, var] = aggregate_regression(means, vars);
            std::filesystem::create_directories(cfg.out_dir);
            CsvWriter csv(cfg.out_dir + "/evaluate.csv", cfg.digest(), cfg.seed,
                          {"x", "ensemble_mean", "ensemble_std"});
            for (Eigen::Index i = 0; i < t.x_grid.rows(); ++i)
                csv.row(t.x_grid(i, 0), mu[i], std::sqrt(std::max(var[i], 0.0)));
            std::cout << "wrote " << cfg.out_dir << "/evaluate.csv ("
                      << means.size() << " members)\n";
            return 0;
        }

        if (verify_cmd->parsed()) {
            const ExperimentReport report = run_experiment(cfg, /*write_files=*/false);
            return print_checks(report);
        }

        if (report_cmd->parsed()) {
            if (report_svg) cfg.svg = true;
            const ExperimentReport report = run_experiment(cfg, /*write_files=*/true);
            std::cout << "experiment " << cfg.experiment << " -> " << cfg.out_dir << "\n";
            return print_checks(report);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
