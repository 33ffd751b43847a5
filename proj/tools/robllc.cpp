#include "robllc/bench.hpp"
#include "robllc/io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;
using robllc::Matrix;
using robllc::Rng;
using robllc::Vector;

robllc::ContaminationTarget parse_target(const std::string& s) {
    if (s == "x") return robllc::ContaminationTarget::X;
    if (s == "e") return robllc::ContaminationTarget::E;
    if (s == "c") return robllc::ContaminationTarget::C;
    throw std::invalid_argument("unknown contamination target: " + s);
}

robllc::CovMethod parse_method(const std::string& s) {
    if (s == "scm") return robllc::CovMethod::Scm;
    if (s == "mcd") return robllc::CovMethod::Mcd;
    if (s == "gde") return robllc::CovMethod::Gde;
    throw std::invalid_argument("unknown backend: " + s);
}

struct GenerateOpts {
    int d = 5;
    double edge_prob = 0.3;
    double conf_prob = 0.3;
    std::uint64_t seed = 1;
    std::string out = "model.json";
};

int run_generate(const GenerateOpts& opts) {
    Rng rng(opts.seed);
    const auto model = robllc::random_model(opts.d, opts.edge_prob, opts.conf_prob, rng);
    auto j = robllc::model_to_json(model);
    j["seed"] = opts.seed;
    j["edge_prob"] = opts.edge_prob;
    j["conf_prob"] = opts.conf_prob;
    robllc::write_json_file(j, opts.out);
    std::cout << "wrote " << opts.out << " (d=" << model.d << ")\n";
    return 0;
}

struct SimulateOpts {
    std::string model_path;
    std::string design_path;
    int n = 200;
    double epsilon = 0.0;
    std::string target = "x";
    double outlier_location = 10.0;
    double outlier_scale = 1.0;
    std::uint64_t seed = 1;
    std::string out = "data";
};

int run_simulate(const SimulateOpts& opts) {
    const auto model = robllc::model_from_json(robllc::read_json_file(opts.model_path));
    const auto design = opts.design_path.empty()
                            ? robllc::single_intervention_design(model.d)
                            : robllc::design_from_json(
                                  robllc::read_json_file(opts.design_path), model.d);
    const auto target = parse_target(opts.target);

    robllc::ContaminationSpec spec;
    spec.rate = opts.epsilon;
    spec.target = target;
    spec.outlier_location = opts.outlier_location;
    spec.outlier_scale = opts.outlier_scale;
    spec.check();

    fs::create_directories(opts.out);
    nlohmann::json files = nlohmann::json::array();
    for (std::size_t k = 0; k < design.experiments.size(); ++k) {
        const auto& exp = design.experiments[k];
        Rng draw_rng(robllc::derive_seed(opts.seed, {2, k}));
        auto sample = robllc::draw_sample(model, exp, opts.n,
                                          robllc::InterventionSpec::identity(model.d), draw_rng);
        const bool skip = target == robllc::ContaminationTarget::C && exp.is_observational();
        if (opts.epsilon > 0.0 && !skip) {
            Rng crng(robllc::derive_seed(opts.seed, {3, k}));
            sample = robllc::contaminate(sample, model, spec, crng);
        }
        const std::string name = "exp_" + std::to_string(k + 1) + ".csv";
        robllc::write_matrix_csv(sample.data, fs::path(opts.out) / name);
        files.push_back(name);
    }

    nlohmann::json manifest;
    manifest["model"] = robllc::model_to_json(model);
    manifest["design"] = robllc::design_to_json(design);
    manifest["n"] = opts.n;
    manifest["epsilon"] = opts.epsilon;
    manifest["target"] = opts.target;
    manifest["outlier_location"] = opts.outlier_location;
    manifest["outlier_scale"] = opts.outlier_scale;
    manifest["seed"] = opts.seed;
    manifest["files"] = files;
    robllc::write_json_file(manifest, fs::path(opts.out) / "manifest.json");
    std::cout << "wrote " << files.size() << " experiment files to " << opts.out << "\n";
    return 0;
}

struct FitOpts {
    std::string data_dir;
    std::string backend = "scm";
    double gamma = 0.3;
    double alpha = 0.5;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    std::string out = "estimate.json";
    std::string truth_path;
};

int run_fit(const FitOpts& opts) {
    const auto manifest = robllc::read_json_file(fs::path(opts.data_dir) / "manifest.json");
    const int d = manifest.at("model").at("d").get<int>();
    const auto design = robllc::design_from_json(manifest.at("design"), d);
    const auto files = manifest.at("files").get<std::vector<std::string>>();
    if (files.size() != design.experiments.size())
        throw std::runtime_error("manifest lists " + std::to_string(files.size()) +
                                 " files for " + std::to_string(design.experiments.size()) +
                                 " experiments");

    std::vector<robllc::Sample> samples;
    for (std::size_t k = 0; k < files.size(); ++k) {
        Matrix data = robllc::read_matrix_csv(fs::path(opts.data_dir) / files[k]);
        if (data.cols() != d)
            throw std::runtime_error(files[k] + " has " + std::to_string(data.cols()) +
                                     " columns, expected " + std::to_string(d));
        samples.push_back(
            {design.experiments[k], data, static_cast<int>(data.rows())});
    }

    robllc::CovBackend backend;
    backend.method = parse_method(opts.backend);
    backend.gde.gamma = opts.gamma;
    backend.mcd.alpha = opts.alpha;
    backend.seed = opts.seed;

    const auto est = robllc::llc_fit(samples, design, backend, opts.lambda);
    auto j = robllc::estimate_to_json(est);
    j["backend"] = opts.backend;
    j["lambda"] = opts.lambda;
    j["seed"] = opts.seed;

    std::cout << "solver: " << est.diagnostics.solver << "\n";
    std::cout << "ill_conditioned: " << (est.diagnostics.ill_conditioned ? "yes" : "no")
              << "\n";
    if (!opts.truth_path.empty()) {
        const auto truth = robllc::model_from_json(robllc::read_json_file(opts.truth_path));
        const double rfe_b = robllc::rfe(est.b_hat, truth.B);
        const double rfe_sigma_e = robllc::rfe(est.sigma_e_hat, truth.sigma_e);
        j["rfe_b"] = rfe_b;
        j["rfe_sigma_e"] = rfe_sigma_e;
        std::printf("rfe_b: %.6g\nrfe_sigma_e: %.6g\n", rfe_b, rfe_sigma_e);
    }
    robllc::write_json_file(j, opts.out);
    std::cout << "wrote " << opts.out << "\n";
    return 0;
}

struct BenchOpts {
    std::string config_path;
    std::string out_dir = "bench_out";
    std::optional<std::uint64_t> seed;
    std::optional<int> n_models;
    std::optional<int> d;
    std::optional<int> n;
    std::optional<int> jobs;
    std::optional<std::string> target;
    std::vector<double> epsilons;
    std::vector<std::string> estimators;
};

int run_bench(const BenchOpts& opts) {
    robllc::BenchmarkConfig cfg;
    if (!opts.config_path.empty())
        cfg = robllc::config_from_json(robllc::read_json_file(opts.config_path));
    if (opts.seed) cfg.master_seed = *opts.seed;
    if (opts.n_models) cfg.n_models = *opts.n_models;
    if (opts.d) cfg.d = *opts.d;
    if (opts.n) cfg.n = *opts.n;
    if (opts.jobs) cfg.jobs = *opts.jobs;
    if (opts.target) cfg.target = parse_target(*opts.target);
    if (!opts.epsilons.empty()) cfg.epsilons = opts.epsilons;
    if (!opts.estimators.empty()) {
        cfg.estimators.clear();
        for (const auto& name : opts.estimators) cfg.estimators.push_back(parse_method(name));
    }

    const auto report = robllc::run_benchmark(cfg);
    robllc::emit_report(report, opts.out_dir);

    std::printf("%-6s %-8s %-6s %-14s %-14s\n", "est", "epsilon", "count", "median_rfe_b",
                "median_rfe_se");
    for (const auto& row : report.aggregates)
        std::printf("%-6s %-8.3g %-6d %-14.4g %-14.4g\n",
                    robllc::to_string(row.estimator).c_str(), row.epsilon, row.count,
                    row.median_rfe_b, row.median_rfe_sigma_e);
    std::cout << "report written to " << opts.out_dir << "\n";
    return 0;
}

int run_demo_breakdown() {
    std::cout << "1. single scaled outlier row drives the non-robust fit to infinity\n";
    Rng model_rng(5);
    const auto model = robllc::random_model(2, 0.9, 0.5, model_rng);
    const auto design = robllc::single_intervention_design(2);
    std::vector<robllc::Sample> samples;
    Rng draw_rng(6);
    for (const auto& exp : design.experiments)
        samples.push_back(robllc::draw_sample(model, exp, 500,
                                              robllc::InterventionSpec::identity(2), draw_rng));
    std::printf("   %-12s %s\n", "scale", "||B_hat||_F");
    double prev = 0.0;
    bool increasing = true;
    for (double s : {1e2, 1e4, 1e6}) {
        auto corrupted = samples;
        corrupted[1].data.row(0) *= s;
        const auto est = robllc::llc_fit(corrupted, design, robllc::CovBackend{});
        const double norm = est.b_hat.norm();
        std::printf("   %-12.6g %.6g\n", s, norm);
        increasing = increasing && norm > prev;
        prev = norm;
    }
    std::cout << "   strictly increasing: " << (increasing ? "yes" : "no") << "\n\n";

    std::cout << "2. ridge regularization shrinks every solution toward zero\n";
    robllc::ConstraintSystem sys;
    sys.d = 2;
    sys.T = Matrix::Identity(2, 2);
    sys.t = Vector(2);
    sys.t << -0.3, 0.8;
    sys.col_index = {{0, 1}, {1, 0}};
    sys.row_index = {{0, 1, 2}, {1, 0, 1}};
    const double lambda = 0.5;
    const Matrix b_hat = robllc::solve_b(sys, lambda);
    Vector b(2);
    for (int c = 0; c < 2; ++c)
        b(c) = b_hat(sys.col_index[c].observed, sys.col_index[c].intervened);
    const Vector expected = sys.t / (1.0 + lambda);
    std::printf("   t = (%.4g, %.4g), lambda = %.4g\n", sys.t(0), sys.t(1), lambda);
    std::printf("   solver returned  (%.17g, %.17g)\n", b(0), b(1));
    std::printf("   t / (1 + lambda) (%.17g, %.17g)\n", expected(0), expected(1));
    std::printf("   max abs difference: %.3g\n\n", (b - expected).cwiseAbs().maxCoeff());

    std::cout << "3. reciprocal total effects make a constraint block singular\n";
    const auto design3 = robllc::single_intervention_design(3);
    std::vector<robllc::TotalEffect> effects = {
        {1, 0, 1, 0.0}, {2, 0, 1, 0.0}, {0, 1, 2, 0.0},
        {2, 1, 2, 2.0}, {0, 2, 3, 0.0}, {1, 2, 3, 0.5},
    };
    const auto report =
        robllc::condition_diagnostics(robllc::assemble_constraints(effects, design3, 3));
    std::cout << "   effect of node 2 on node 3 fixed to 2, node 3 on node 2 fixed to 1/2\n";
    std::printf("   %-10s %s\n", "block", "condition");
    for (std::size_t u = 0; u < report.block_condition.size(); ++u)
        std::printf("   %-10zu %.6g\n", u + 1, report.block_condition[u]);
    std::cout << "   singularity flag raised: " << (report.flag ? "yes" : "no") << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LLC estimation for linear cyclic causal models with robust covariance "
                 "back ends"};
    app.require_subcommand(1);

    GenerateOpts gen;
    auto* generate = app.add_subcommand("generate", "draw a random model and write it as JSON");
    generate->add_option("--d", gen.d, "number of nodes")->check(CLI::Range(2, 1000));
    generate->add_option("--edge-prob", gen.edge_prob, "edge probability")
        ->check(CLI::Range(0.0, 1.0));
    generate->add_option("--conf-prob", gen.conf_prob, "confounder probability")
        ->check(CLI::Range(0.0, 1.0));
    generate->add_option("--seed", gen.seed, "random seed");
    generate->add_option("--out", gen.out, "output model file");

    SimulateOpts sim;
    auto* simulate =
        app.add_subcommand("simulate", "draw experiment samples from a model");
    simulate->add_option("--model", sim.model_path, "model JSON file")->required();
    simulate->add_option("--design", sim.design_path,
                         "design JSON file (default: observational plus one "
                         "intervention per node)");
    simulate->add_option("--n", sim.n, "rows per experiment")->check(CLI::PositiveNumber);
    simulate->add_option("--epsilon", sim.epsilon, "contamination rate")
        ->check(CLI::Range(0.0, 0.999));
    simulate->add_option("--target", sim.target, "contamination target")
        ->check(CLI::IsMember({"x", "e", "c"}));
    simulate->add_option("--outlier-location", sim.outlier_location, "outlier mean");
    simulate->add_option("--outlier-scale", sim.outlier_scale, "outlier scale")
        ->check(CLI::PositiveNumber);
    simulate->add_option("--seed", sim.seed, "random seed");
    simulate->add_option("--out", sim.out, "output directory");

    FitOpts fit;
    auto* fit_cmd = app.add_subcommand("fit", "estimate (B, SigmaE) from simulated data");
    fit_cmd->add_option("--data-dir", fit.data_dir, "directory written by simulate")
        ->required();
    fit_cmd->add_option("--backend", fit.backend, "covariance back end")
        ->check(CLI::IsMember({"scm", "mcd", "gde"}));
    fit_cmd->add_option("--gamma", fit.gamma, "gde exponent")->check(CLI::PositiveNumber);
    fit_cmd->add_option("--alpha", fit.alpha, "mcd subset fraction")
        ->check(CLI::Range(0.5, 1.0));
    fit_cmd->add_option("--lambda", fit.lambda, "ridge penalty")
        ->check(CLI::NonNegativeNumber);
    fit_cmd->add_option("--seed", fit.seed, "random seed for the back end");
    fit_cmd->add_option("--out", fit.out, "output estimate file");
    fit_cmd->add_option("--truth", fit.truth_path,
                        "model JSON to score the estimate against");

    BenchOpts bench;
    auto* bench_cmd = app.add_subcommand("bench", "run the contamination benchmark");
    bench_cmd->add_option("--config", bench.config_path, "benchmark config JSON");
    bench_cmd->add_option("--out-dir", bench.out_dir, "report directory");
    bench_cmd->add_option("--seed", bench.seed, "master seed override");
    bench_cmd->add_option("--n-models", bench.n_models, "model count override")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--d", bench.d, "node count override")->check(CLI::Range(2, 1000));
    bench_cmd->add_option("--n", bench.n, "rows per experiment override")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--jobs", bench.jobs, "worker thread count")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--target", bench.target, "contamination target override")
        ->check(CLI::IsMember({"x", "e", "c"}));
    bench_cmd->add_option("--epsilon", bench.epsilons, "contamination rates override");
    bench_cmd->add_option("--estimator", bench.estimators, "estimators override")
        ->check(CLI::IsMember({"scm", "mcd", "gde"}));

    auto* demo = app.add_subcommand("demo-breakdown",
                                    "print the three failure constructions behind the "
                                    "robustness analysis");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (generate->parsed()) return run_generate(gen);
        if (simulate->parsed()) return run_simulate(sim);
        if (fit_cmd->parsed()) return run_fit(fit);
        if (bench_cmd->parsed()) return run_bench(bench);
        if (demo->parsed()) return run_demo_breakdown();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
