#pragma once

#include "robllc/llc.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace robllc {

inline double rfe(const Matrix& estimate, const Matrix& truth) {
    if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
        throw std::invalid_argument("shape mismatch in relative error");
    const double denom = truth.norm();
    if (denom == 0.0) throw std::invalid_argument("relative error against a zero matrix");
    return (estimate - truth).norm() / denom;
}

inline double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of an empty list");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

inline double mad(const std::vector<double>& values) {
    const double center = median(values);
    std::vector<double> dev;
    dev.reserve(values.size());
    for (double v : values) dev.push_back(std::abs(v - center));
    return median(std::move(dev));
}

// Two-sided signed-rank test on paired values. Zero differences are dropped,
// tied magnitudes get midranks; the null distribution is enumerated exactly
// for up to 25 nonzero differences and approximated normally above that.
inline double wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired samples differ in length");
    if (a.size() < 5) throw std::invalid_argument("need at least five pairs");

    std::vector<double> diffs;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d != 0.0) diffs.push_back(d);
    }
    if (diffs.empty()) return 1.0;
    const int m = static_cast<int>(diffs.size());

    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) {
        return std::abs(diffs[x]) < std::abs(diffs[y]);
    });

    // ranks doubled so midranks stay integral
    std::vector<long long> two_rank(m);
    std::vector<int> tie_sizes;
    int i = 0;
    while (i < m) {
        int j = i;
        while (j + 1 < m && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
        const long long tr = i + j + 2;  // doubled midrank of positions i..j
        for (int k = i; k <= j; ++k) two_rank[order[k]] = tr;
        tie_sizes.push_back(j - i + 1);
        i = j + 1;
    }

    long long w2 = 0;
    for (int k = 0; k < m; ++k)
        if (diffs[k] > 0.0) w2 += two_rank[k];

    if (m <= 25) {
        const long long total = static_cast<long long>(m) * (m + 1);
        std::vector<double> ways(total + 1, 0.0);
        ways[0] = 1.0;
        for (int k = 0; k < m; ++k)
            for (long long s = total; s >= two_rank[k]; --s) ways[s] += ways[s - two_rank[k]];
        const double denom = std::ldexp(1.0, m);
        double below = 0.0, above = 0.0;
        for (long long s = 0; s <= total; ++s) {
            if (s <= w2) below += ways[s];
            if (s >= w2) above += ways[s];
        }
        return std::min(1.0, 2.0 * std::min(below, above) / denom);
    }

    const double mean = m * (m + 1) / 4.0;
    double tie_term = 0.0;
    for (int t : tie_sizes) tie_term += static_cast<double>(t) * t * t - t;
    const double var = m * (m + 1) * (2.0 * m + 1) / 24.0 - tie_term / 48.0;
    const double sd = std::sqrt(var);
    const double w = 0.5 * w2;
    const auto phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
    const double below = phi((w - mean + 0.5) / sd);
    const double above = 1.0 - phi((w - mean - 0.5) / sd);
    return std::min(1.0, 2.0 * std::min(below, above));
}

struct BenchmarkConfig {
    int n_models = 200;
    int d = 5;
    int n = 200;
    double edge_prob = 0.3;
    double conf_prob = 0.3;
    std::vector<double> epsilons = {0.0, 0.05, 0.1, 0.2, 0.3};
    std::vector<CovMethod> estimators = {CovMethod::Scm, CovMethod::Mcd, CovMethod::Gde};
    McdConfig mcd;
    GdeConfig gde;
    ContaminationTarget target = ContaminationTarget::X;
    double outlier_location = 10.0;
    double outlier_scale = 1.0;
    double lambda = 0.0;
    std::uint64_t master_seed = 1;
    int jobs = 1;

    void check() const {
        if (n_models < 1) throw std::invalid_argument("need at least one model");
        if (d < 2) throw std::invalid_argument("need at least two nodes");
        if (n < 2) throw std::invalid_argument("need at least two observations");
        if (estimators.empty()) throw std::invalid_argument("no estimators selected");
        for (double eps : epsilons)
            if (eps < 0.0 || eps >= 1.0)
                throw std::invalid_argument("contamination rates must lie in [0, 1)");
        if (jobs < 1) throw std::invalid_argument("job count must be positive");
        mcd.check();
        gde.check();
    }
};

struct BenchmarkRecord {
    int model_id = 0;
    CovMethod estimator = CovMethod::Scm;
    double epsilon = 0.0;
    double rfe_b = 0.0;
    double rfe_sigma_e = 0.0;
    double runtime_s = 0.0;
    int flag = 0;  // 0 clean, 1 ill-conditioned system, 2 failed fit
};

struct AggregateRow {
    CovMethod estimator = CovMethod::Scm;
    double epsilon = 0.0;
    int count = 0;
    double median_rfe_b = 0.0;
    double mad_rfe_b = 0.0;
    double median_rfe_sigma_e = 0.0;
    double mad_rfe_sigma_e = 0.0;
};

struct PairedTestRow {
    double epsilon = 0.0;
    std::string metric;
    CovMethod estimator_a = CovMethod::Scm;
    CovMethod estimator_b = CovMethod::Scm;
    int pairs = 0;
    double p_value = 1.0;
};

struct BenchmarkReport {
    BenchmarkConfig config;
    std::vector<BenchmarkRecord> records;
    std::vector<AggregateRow> aggregates;
    std::vector<PairedTestRow> pvalues;
};

inline std::vector<AggregateRow> aggregate(const std::vector<BenchmarkRecord>& records) {
    std::vector<AggregateRow> rows;
    std::vector<std::pair<CovMethod, double>> seen;
    for (const auto& rec : records) {
        const std::pair<CovMethod, double> key{rec.estimator, rec.epsilon};
        if (std::find(seen.begin(), seen.end(), key) == seen.end()) seen.push_back(key);
    }
    for (const auto& [est, eps] : seen) {
        std::vector<double> b_vals, s_vals;
        for (const auto& rec : records) {
            if (rec.estimator != est || rec.epsilon != eps || rec.flag == 2) continue;
            b_vals.push_back(rec.rfe_b);
            s_vals.push_back(rec.rfe_sigma_e);
        }
        if (b_vals.empty()) continue;
        AggregateRow row;
        row.estimator = est;
        row.epsilon = eps;
        row.count = static_cast<int>(b_vals.size());
        row.median_rfe_b = median(b_vals);
        row.mad_rfe_b = mad(b_vals);
        row.median_rfe_sigma_e = median(s_vals);
        row.mad_rfe_sigma_e = mad(s_vals);
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace detail {

inline std::vector<PairedTestRow> paired_tests(const std::vector<BenchmarkRecord>& records,
                                               const BenchmarkConfig& cfg) {
    std::vector<PairedTestRow> rows;
    const auto metric_value = [](const BenchmarkRecord& r, int metric) {
        return metric == 0 ? r.rfe_b : r.rfe_sigma_e;
    };
    for (double eps : cfg.epsilons) {
        for (int metric = 0; metric < 2; ++metric) {
            for (std::size_t ia = 0; ia < cfg.estimators.size(); ++ia) {
                for (std::size_t ib = ia + 1; ib < cfg.estimators.size(); ++ib) {
                    std::vector<double> a_vals, b_vals;
                    for (int id = 0; id < cfg.n_models; ++id) {
                        const BenchmarkRecord* ra = nullptr;
                        const BenchmarkRecord* rb = nullptr;
                        for (const auto& rec : records) {
                            if (rec.model_id != id || rec.epsilon != eps || rec.flag == 2)
                                continue;
                            if (rec.estimator == cfg.estimators[ia]) ra = &rec;
                            if (rec.estimator == cfg.estimators[ib]) rb = &rec;
                        }
                        if (ra && rb) {
                            a_vals.push_back(metric_value(*ra, metric));
                            b_vals.push_back(metric_value(*rb, metric));
                        }
                    }
                    if (a_vals.size() < 5) continue;
                    PairedTestRow row;
                    row.epsilon = eps;
                    row.metric = metric == 0 ? "rfe_b" : "rfe_sigma_e";
                    row.estimator_a = cfg.estimators[ia];
                    row.estimator_b = cfg.estimators[ib];
                    row.pairs = static_cast<int>(a_vals.size());
                    row.p_value = wilcoxon_signed_rank(a_vals, b_vals);
                    rows.push_back(std::move(row));
                }
            }
        }
    }
    return rows;
}

inline std::uint64_t epsilon_bits(double eps) { return std::bit_cast<std::uint64_t>(eps); }

}  // namespace detail

// Evaluates every configured estimator on the same contaminated draws of
// n_models random systems. Each unit of work derives its generators from
// (master_seed, model_id), so results do not depend on scheduling.
inline BenchmarkReport run_benchmark(const BenchmarkConfig& cfg) {
    cfg.check();
    const auto design = single_intervention_design(cfg.d);
    const int n_exp = static_cast<int>(design.experiments.size());
    const int per_model = static_cast<int>(cfg.epsilons.size() * cfg.estimators.size());

    BenchmarkReport report;
    report.config = cfg;
    report.records.resize(static_cast<std::size_t>(cfg.n_models) * per_model);

    const auto run_model = [&](int id) {
        const auto fail_all = [&]() {
            for (std::size_t ei = 0; ei < cfg.epsilons.size(); ++ei)
                for (std::size_t si = 0; si < cfg.estimators.size(); ++si) {
                    BenchmarkRecord rec;
                    rec.model_id = id;
                    rec.estimator = cfg.estimators[si];
                    rec.epsilon = cfg.epsilons[ei];
                    rec.rfe_b = std::numeric_limits<double>::quiet_NaN();
                    rec.rfe_sigma_e = std::numeric_limits<double>::quiet_NaN();
                    rec.flag = 2;
                    report.records[id * per_model + ei * cfg.estimators.size() + si] = rec;
                }
        };

        CausalModel model;
        std::vector<Sample> base;
        try {
            Rng model_rng(derive_seed(cfg.master_seed, {1, static_cast<std::uint64_t>(id)}));
            model = random_model(cfg.d, cfg.edge_prob, cfg.conf_prob, model_rng);
            for (int k = 0; k < n_exp; ++k) {
                Rng draw_rng(derive_seed(cfg.master_seed,
                                         {2, static_cast<std::uint64_t>(id),
                                          static_cast<std::uint64_t>(k)}));
                base.push_back(draw_sample(model, design.experiments[k], cfg.n,
                                           InterventionSpec::identity(cfg.d), draw_rng));
            }
        } catch (const std::exception&) {
            fail_all();
            return;
        }

        for (std::size_t ei = 0; ei < cfg.epsilons.size(); ++ei) {
            const double eps = cfg.epsilons[ei];
            std::vector<Sample> samples;
            try {
                if (eps == 0.0) {
                    samples = base;
                } else {
                    ContaminationSpec spec;
                    spec.rate = eps;
                    spec.target = cfg.target;
                    spec.outlier_location = cfg.outlier_location;
                    spec.outlier_scale = cfg.outlier_scale;
                    for (int k = 0; k < n_exp; ++k) {
                        if (cfg.target == ContaminationTarget::C &&
                            design.experiments[k].is_observational()) {
                            samples.push_back(base[k]);
                            continue;
                        }
                        Rng crng(derive_seed(cfg.master_seed,
                                             {3, static_cast<std::uint64_t>(id),
                                              detail::epsilon_bits(eps),
                                              static_cast<std::uint64_t>(k)}));
                        samples.push_back(contaminate(base[k], model, spec, crng));
                    }
                }
            } catch (const std::exception&) {
                for (std::size_t si = 0; si < cfg.estimators.size(); ++si) {
                    BenchmarkRecord rec;
                    rec.model_id = id;
                    rec.estimator = cfg.estimators[si];
                    rec.epsilon = eps;
                    rec.rfe_b = std::numeric_limits<double>::quiet_NaN();
                    rec.rfe_sigma_e = std::numeric_limits<double>::quiet_NaN();
                    rec.flag = 2;
                    report.records[id * per_model + ei * cfg.estimators.size() + si] = rec;
                }
                continue;
            }

            for (std::size_t si = 0; si < cfg.estimators.size(); ++si) {
                BenchmarkRecord rec;
                rec.model_id = id;
                rec.estimator = cfg.estimators[si];
                rec.epsilon = eps;
                const auto start = std::chrono::steady_clock::now();
                try {
                    CovBackend backend;
                    backend.method = cfg.estimators[si];
                    backend.mcd = cfg.mcd;
                    backend.gde = cfg.gde;
                    backend.seed = derive_seed(cfg.master_seed,
                                               {4, static_cast<std::uint64_t>(id),
                                                detail::epsilon_bits(eps),
                                                static_cast<std::uint64_t>(si)});
                    const LlcEstimate est = llc_fit(samples, design, backend, cfg.lambda);
                    rec.rfe_b = rfe(est.b_hat, model.B);
                    rec.rfe_sigma_e = rfe(est.sigma_e_hat, model.sigma_e);
                    rec.flag = est.diagnostics.ill_conditioned ? 1 : 0;
                } catch (const std::exception&) {
                    rec.rfe_b = std::numeric_limits<double>::quiet_NaN();
                    rec.rfe_sigma_e = std::numeric_limits<double>::quiet_NaN();
                    rec.flag = 2;
                }
                rec.runtime_s = std::chrono::duration<double>(
                                    std::chrono::steady_clock::now() - start)
                                    .count();
                report.records[id * per_model + ei * cfg.estimators.size() + si] = rec;
            }
        }
    };

    if (cfg.jobs <= 1) {
        for (int id = 0; id < cfg.n_models; ++id) run_model(id);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        const int workers = std::min(cfg.jobs, cfg.n_models);
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&]() {
                for (int id = next.fetch_add(1); id < cfg.n_models; id = next.fetch_add(1))
                    run_model(id);
            });
        for (auto& t : pool) t.join();
    }

    report.aggregates = aggregate(report.records);
    report.pvalues = detail::paired_tests(report.records, cfg);
    return report;
}

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline nlohmann::json config_to_json(const BenchmarkConfig& cfg) {
    nlohmann::json j;
    j["n_models"] = cfg.n_models;
    j["d"] = cfg.d;
    j["n"] = cfg.n;
    j["edge_prob"] = cfg.edge_prob;
    j["conf_prob"] = cfg.conf_prob;
    j["epsilons"] = cfg.epsilons;
    std::vector<std::string> names;
    for (CovMethod m : cfg.estimators) names.push_back(to_string(m));
    j["estimators"] = names;
    j["mcd"] = {{"alpha", cfg.mcd.alpha},
                {"n_starts", cfg.mcd.n_starts},
                {"max_csteps", cfg.mcd.max_csteps}};
    j["gde"] = {{"gamma", cfg.gde.gamma},
                {"tol", cfg.gde.tol},
                {"max_iter", cfg.gde.max_iter},
                {"init", cfg.gde.init == GdeInit::Scm ? "scm" : "mcd"}};
    j["target"] = to_string(cfg.target);
    j["outlier_location"] = cfg.outlier_location;
    j["outlier_scale"] = cfg.outlier_scale;
    j["lambda"] = cfg.lambda;
    j["master_seed"] = cfg.master_seed;
    j["jobs"] = cfg.jobs;
    return j;
}

inline BenchmarkConfig config_from_json(const nlohmann::json& j) {
    BenchmarkConfig cfg;
    if (j.contains("n_models")) cfg.n_models = j.at("n_models").get<int>();
    if (j.contains("d")) cfg.d = j.at("d").get<int>();
    if (j.contains("n")) cfg.n = j.at("n").get<int>();
    if (j.contains("edge_prob")) cfg.edge_prob = j.at("edge_prob").get<double>();
    if (j.contains("conf_prob")) cfg.conf_prob = j.at("conf_prob").get<double>();
    if (j.contains("epsilons")) cfg.epsilons = j.at("epsilons").get<std::vector<double>>();
    if (j.contains("estimators")) {
        cfg.estimators.clear();
        for (const auto& name : j.at("estimators")) {
            const std::string s = name.get<std::string>();
            if (s == "scm")
                cfg.estimators.push_back(CovMethod::Scm);
            else if (s == "mcd")
                cfg.estimators.push_back(CovMethod::Mcd);
            else if (s == "gde")
                cfg.estimators.push_back(CovMethod::Gde);
            else
                throw std::invalid_argument("unknown estimator name: " + s);
        }
    }
    if (j.contains("mcd")) {
        const auto& m = j.at("mcd");
        if (m.contains("alpha")) cfg.mcd.alpha = m.at("alpha").get<double>();
        if (m.contains("n_starts")) cfg.mcd.n_starts = m.at("n_starts").get<int>();
        if (m.contains("max_csteps")) cfg.mcd.max_csteps = m.at("max_csteps").get<int>();
    }
    if (j.contains("gde")) {
        const auto& g = j.at("gde");
        if (g.contains("gamma")) cfg.gde.gamma = g.at("gamma").get<double>();
        if (g.contains("tol")) cfg.gde.tol = g.at("tol").get<double>();
        if (g.contains("max_iter")) cfg.gde.max_iter = g.at("max_iter").get<int>();
        if (g.contains("init"))
            cfg.gde.init = g.at("init").get<std::string>() == "mcd" ? GdeInit::Mcd
                                                                    : GdeInit::Scm;
    }
    if (j.contains("target")) {
        const std::string t = j.at("target").get<std::string>();
        if (t == "x")
            cfg.target = ContaminationTarget::X;
        else if (t == "e")
            cfg.target = ContaminationTarget::E;
        else if (t == "c")
            cfg.target = ContaminationTarget::C;
        else
            throw std::invalid_argument("unknown contamination target: " + t);
    }
    if (j.contains("outlier_location"))
        cfg.outlier_location = j.at("outlier_location").get<double>();
    if (j.contains("outlier_scale")) cfg.outlier_scale = j.at("outlier_scale").get<double>();
    if (j.contains("lambda")) cfg.lambda = j.at("lambda").get<double>();
    if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    if (j.contains("jobs")) cfg.jobs = j.at("jobs").get<int>();
    return cfg;
}

// Writes records.csv, aggregates.csv, pvalues.csv, plot_data.csv, and
// manifest.json into dir. Numbers are printed with 17 significant digits so
// reruns with the same seed reproduce the files byte for byte.
inline void emit_report(const BenchmarkReport& report, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto open = [&](const char* name) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw std::runtime_error(std::string("cannot write ") + name);
        return out;
    };

    {
        auto out = open("records.csv");
        out << "model_id,estimator,epsilon,rfe_b,rfe_sigma_e,flag\n";
        for (const auto& r : report.records)
            out << r.model_id << ',' << to_string(r.estimator) << ','
                << detail::format_double(r.epsilon) << ',' << detail::format_double(r.rfe_b)
                << ',' << detail::format_double(r.rfe_sigma_e) << ',' << r.flag << '\n';
    }
    {
        auto out = open("aggregates.csv");
        out << "estimator,epsilon,count,median_rfe_b,mad_rfe_b,median_rfe_sigma_e,"
               "mad_rfe_sigma_e\n";
        for (const auto& a : report.aggregates)
            out << to_string(a.estimator) << ',' << detail::format_double(a.epsilon) << ','
                << a.count << ',' << detail::format_double(a.median_rfe_b) << ','
                << detail::format_double(a.mad_rfe_b) << ','
                << detail::format_double(a.median_rfe_sigma_e) << ','
                << detail::format_double(a.mad_rfe_sigma_e) << '\n';
    }
    {
        auto out = open("pvalues.csv");
        out << "epsilon,metric,estimator_a,estimator_b,pairs,p_value\n";
        for (const auto& p : report.pvalues)
            out << detail::format_double(p.epsilon) << ',' << p.metric << ','
                << to_string(p.estimator_a) << ',' << to_string(p.estimator_b) << ','
                << p.pairs << ',' << detail::format_double(p.p_value) << '\n';
    }
    {
        auto out = open("plot_data.csv");
        out << "epsilon,estimator,metric,value\n";
        for (const auto& r : report.records) {
            if (r.flag == 2) continue;
            out << detail::format_double(r.epsilon) << ',' << to_string(r.estimator)
                << ",rfe_b," << detail::format_double(r.rfe_b) << '\n';
            out << detail::format_double(r.epsilon) << ',' << to_string(r.estimator)
                << ",rfe_sigma_e," << detail::format_double(r.rfe_sigma_e) << '\n';
        }
    }
    {
        nlohmann::json manifest;
        manifest["config"] = config_to_json(report.config);
        manifest["reference_line"] = 1.0;
        manifest["mad_scaling"] = "unscaled";
        manifest["record_count"] = report.records.size();
        auto out = open("manifest.json");
        out << manifest.dump(2) << '\n';
    }
}

}  // namespace robllc
