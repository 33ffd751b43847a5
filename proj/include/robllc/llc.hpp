#pragma once

#include "robllc/covest.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace robllc {

// One measured total effect: the covariance between an intervened node and an
// observed node in one experiment.
struct TotalEffect {
    int observed = 0;
    int intervened = 0;
    int experiment = 0;
    double value = 0.0;
};

inline std::vector<TotalEffect> extract_total_effects(const CovEstimate& cov,
                                                      const Experiment& exp,
                                                      int experiment_index = 0) {
    if (cov.cov.rows() != exp.d || cov.cov.cols() != exp.d)
        throw std::invalid_argument("covariance dimension does not match the experiment");
    std::vector<TotalEffect> effects;
    effects.reserve(exp.observed.size() * exp.intervened.size());
    for (int u : exp.observed)
        for (int i : exp.intervened)
            effects.push_back({u, i, experiment_index, cov.cov(u, i)});
    return effects;
}

// Linear system relating measured total effects to direct effects. Columns
// enumerate the off-diagonal entries of B row by row; rows are grouped by
// observed node, which makes the coefficient matrix block-diagonal.
struct ConstraintSystem {
    struct ColKey {
        int observed = 0;
        int intervened = 0;
        bool operator==(const ColKey&) const = default;
    };
    struct RowKey {
        int observed = 0;
        int intervened = 0;
        int experiment = 0;
        bool operator==(const RowKey&) const = default;
    };

    Matrix T;
    Vector t;
    int d = 0;
    std::vector<ColKey> col_index;
    std::vector<RowKey> row_index;
};

inline int direct_effect_column(int observed, int intervened, int d) {
    return observed * (d - 1) + intervened - (intervened > observed ? 1 : 0);
}

inline ConstraintSystem assemble_constraints(const std::vector<TotalEffect>& effects,
                                             const ExperimentDesign& design, int d) {
    std::map<std::tuple<int, int, int>, double> value_of;
    for (const auto& e : effects) value_of[{e.experiment, e.observed, e.intervened}] = e.value;

    std::vector<ConstraintSystem::RowKey> rows;
    rows.reserve(effects.size());
    for (int u = 0; u < d; ++u)
        for (const auto& e : effects)
            if (e.observed == u) rows.push_back({e.observed, e.intervened, e.experiment});
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        return std::tie(a.observed, a.experiment, a.intervened) <
               std::tie(b.observed, b.experiment, b.intervened);
    });

    ConstraintSystem sys;
    sys.d = d;
    sys.row_index = std::move(rows);
    sys.col_index.reserve(d * (d - 1));
    for (int u = 0; u < d; ++u)
        for (int i = 0; i < d; ++i)
            if (i != u) sys.col_index.push_back({u, i});

    const int n_rows = static_cast<int>(sys.row_index.size());
    const int n_cols = d * (d - 1);
    sys.T = Matrix::Zero(n_rows, n_cols);
    sys.t = Vector::Zero(n_rows);
    for (int r = 0; r < n_rows; ++r) {
        const auto& key = sys.row_index[r];
        if (key.experiment < 0 || key.experiment >= static_cast<int>(design.experiments.size()))
            throw std::invalid_argument("total effect refers to an unknown experiment");
        const Experiment& exp = design.experiments[key.experiment];
        sys.t(r) = value_of.at({key.experiment, key.observed, key.intervened});
        sys.T(r, direct_effect_column(key.observed, key.intervened, d)) = 1.0;
        for (int other : exp.observed) {
            if (other == key.observed) continue;
            const auto it = value_of.find({key.experiment, other, key.intervened});
            if (it == value_of.end())
                throw std::invalid_argument("missing total effect for an observed node pair");
            sys.T(r, direct_effect_column(key.observed, other, d)) = it->second;
        }
    }
    return sys;
}

struct ConditionReport {
    std::vector<double> block_condition;
    bool flag = false;
};

namespace detail {

struct BlockView {
    Matrix T;
    Vector t;
};

inline BlockView constraint_block(const ConstraintSystem& sys, int u) {
    const int d = sys.d;
    std::vector<int> rows;
    for (int r = 0; r < static_cast<int>(sys.row_index.size()); ++r)
        if (sys.row_index[r].observed == u) rows.push_back(r);
    BlockView block;
    block.T.resize(rows.size(), d - 1);
    block.t.resize(rows.size());
    for (int r = 0; r < static_cast<int>(rows.size()); ++r) {
        block.T.row(r) = sys.T.block(rows[r], u * (d - 1), 1, d - 1);
        block.t(r) = sys.t(rows[r]);
    }
    return block;
}

}  // namespace detail

inline ConditionReport condition_diagnostics(const ConstraintSystem& sys) {
    ConditionReport report;
    report.block_condition.reserve(sys.d);
    for (int u = 0; u < sys.d; ++u) {
        const auto block = detail::constraint_block(sys, u);
        double cond = std::numeric_limits<double>::infinity();
        if (block.T.rows() >= block.T.cols() && block.T.cols() > 0) {
            Eigen::JacobiSVD<Matrix> svd(block.T);
            const double smin = svd.singularValues().minCoeff();
            const double smax = svd.singularValues().maxCoeff();
            cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
        }
        report.block_condition.push_back(cond);
        if (!(cond <= 1e8)) report.flag = true;
    }
    return report;
}

// Solves for the direct effects block by block: an exact ridge solve when
// lambda > 0, otherwise least squares through the pseudoinverse with singular
// values below 1e-10 times the largest treated as zero.
inline Matrix solve_b(const ConstraintSystem& sys, double lambda = 0.0,
                      double* residual_norm = nullptr) {
    if (lambda < 0.0) throw std::invalid_argument("ridge parameter must be nonnegative");
    const int d = sys.d;
    Matrix b_hat = Matrix::Zero(d, d);
    Vector b_flat = Vector::Zero(d * (d - 1));
    for (int u = 0; u < d; ++u) {
        const auto block = detail::constraint_block(sys, u);
        if (block.T.rows() == 0) continue;
        Vector b_u;
        if (lambda > 0.0) {
            const Matrix normal = block.T.transpose() * block.T +
                                  lambda * Matrix::Identity(d - 1, d - 1);
            b_u = Eigen::LDLT<Matrix>(normal).solve(block.T.transpose() * block.t);
        } else {
            Eigen::JacobiSVD<Matrix> svd(block.T, Eigen::ComputeThinU | Eigen::ComputeThinV);
            const Vector& sv = svd.singularValues();
            const double cutoff = 1e-10 * (sv.size() > 0 ? sv.maxCoeff() : 0.0);
            Vector inv = Vector::Zero(sv.size());
            for (Eigen::Index i = 0; i < sv.size(); ++i)
                if (sv(i) > cutoff) inv(i) = 1.0 / sv(i);
            b_u = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * block.t;
        }
        b_flat.segment(u * (d - 1), d - 1) = b_u;
    }
    for (int c = 0; c < static_cast<int>(sys.col_index.size()); ++c)
        b_hat(sys.col_index[c].observed, sys.col_index[c].intervened) = b_flat(c);
    if (residual_norm) *residual_norm = (sys.T * b_flat - sys.t).norm();
    return b_hat;
}

inline Matrix estimate_sigma_e(const Matrix& b_hat, const CovEstimate& cov0) {
    const int d = static_cast<int>(b_hat.rows());
    const Matrix m = Matrix::Identity(d, d) - b_hat;
    const Matrix s = m * cov0.cov * m.transpose();
    return 0.5 * (s + s.transpose());
}

struct LlcDiagnostics {
    std::vector<double> block_condition;
    bool ill_conditioned = false;
    double residual_norm = 0.0;
    std::string solver;
    double lambda = 0.0;
};

struct LlcEstimate {
    Matrix b_hat;
    Matrix sigma_e_hat;
    LlcDiagnostics diagnostics;
};

// Covariance back end selection for the fit: which estimator to run per
// experiment plus its configuration; seed drives the randomized subset search.
struct CovBackend {
    CovMethod method = CovMethod::Scm;
    McdConfig mcd;
    GdeConfig gde;
    std::uint64_t seed = 0;
};

inline CovEstimate estimate_covariance(const Sample& sample, const CovBackend& backend,
                                       int experiment_index) {
    switch (backend.method) {
        case CovMethod::Scm: return scm(sample);
        case CovMethod::Mcd: {
            Rng rng(derive_seed(backend.seed, {0x6d6364u, static_cast<std::uint64_t>(
                                                              experiment_index)}));
            return mcd(sample, backend.mcd, rng);
        }
        case CovMethod::Gde: return gde(sample, backend.gde);
    }
    throw std::logic_error("unknown covariance method");
}

// Fits (B, Sigma_e) from per-experiment covariance estimates. The
// observational covariance recovers the disturbance covariance; every
// interventional one contributes total-effect constraints.
inline LlcEstimate llc_fit_covariances(const std::vector<CovEstimate>& covs,
                                       const ExperimentDesign& design, int d,
                                       double lambda = 0.0) {
    if (covs.size() != design.experiments.size())
        throw std::invalid_argument("one covariance estimate per experiment required");
    int obs_count = 0;
    for (const auto& exp : design.experiments)
        if (exp.is_observational()) ++obs_count;
    if (obs_count != 1)
        throw std::invalid_argument("exactly one observational experiment required");
    if (!pair_condition(design, d))
        throw std::invalid_argument(
            "design misses an (intervened, observed) pair; constraints underdetermined");

    std::vector<TotalEffect> effects;
    for (int k = 0; k < static_cast<int>(design.experiments.size()); ++k) {
        if (design.experiments[k].is_observational()) continue;
        auto part = extract_total_effects(covs[k], design.experiments[k], k);
        effects.insert(effects.end(), part.begin(), part.end());
    }

    const ConstraintSystem sys = assemble_constraints(effects, design, d);
    const ConditionReport cond = condition_diagnostics(sys);

    LlcEstimate est;
    est.diagnostics.block_condition = cond.block_condition;
    est.diagnostics.ill_conditioned = cond.flag;
    est.diagnostics.solver = lambda > 0.0 ? "ridge" : "least-squares";
    est.diagnostics.lambda = lambda;
    est.b_hat = solve_b(sys, lambda, &est.diagnostics.residual_norm);
    est.sigma_e_hat = estimate_sigma_e(est.b_hat, covs[design.observational_index()]);
    return est;
}

inline LlcEstimate llc_fit(const std::vector<Sample>& samples, const ExperimentDesign& design,
                           const CovBackend& backend, double lambda = 0.0) {
    if (samples.size() != design.experiments.size())
        throw std::invalid_argument("one sample per experiment required");
    int d = 0;
    std::vector<CovEstimate> covs;
    covs.reserve(samples.size());
    for (int k = 0; k < static_cast<int>(samples.size()); ++k) {
        if (!(samples[k].experiment == design.experiments[k]))
            throw std::invalid_argument("sample order does not match the design");
        d = samples[k].experiment.d;
        try {
            covs.push_back(estimate_covariance(samples[k], backend, k));
        } catch (const std::exception& err) {
            throw std::runtime_error("covariance back end failed on experiment " +
                                     std::to_string(k) + ": " + err.what());
        }
    }
    return llc_fit_covariances(covs, design, d, lambda);
}

}  // namespace robllc
