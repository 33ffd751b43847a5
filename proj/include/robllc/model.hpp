// Linear cyclic causal models with latent confounders: model and experiment
// types, random model generation, and exact population-level oracles.
//
// Node indices are 0-based throughout the library; the JSON/CSV layer
// (io.hpp) converts to the 1-based convention used in files.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace robllc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Mixes a master seed with stream identifiers into an independent seed
/// (splitmix64 avalanche per component). Used to derive per-model,
/// per-experiment generators that are schedule-independent.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> stream) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL;
    auto mix = [&z](std::uint64_t v) {
        z += v + 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z = z ^ (z >> 31);
    };
    for (std::uint64_t v : stream) mix(v);
    return z;
}

/// A linear cyclic causal model x = Bx + e.
///
/// B(i,j) is the direct effect of x_j on x_i; the diagonal is zero (no
/// self-cycles). sigma_e is the disturbance covariance; its off-diagonal
/// entries encode hidden confounders.
struct CausalModel {
    int d = 0;
    Matrix B;
    Matrix sigma_e;
};

/// An intervention experiment: the node set J is forced to exogenous values,
/// U = {0..d-1} \ J is observed. J and U partition the nodes.
struct Experiment {
    int d = 0;
    std::vector<int> intervened;  // J, sorted ascending
    std::vector<int> observed;    // U, sorted ascending

    static Experiment observational(int d) { return intervene({}, d); }

    static Experiment intervene(std::vector<int> j, int d) {
        if (d < 1) throw std::invalid_argument("Experiment: d must be positive");
        std::sort(j.begin(), j.end());
        j.erase(std::unique(j.begin(), j.end()), j.end());
        if (!j.empty() && (j.front() < 0 || j.back() >= d))
            throw std::invalid_argument("Experiment: node index out of range");
        Experiment e;
        e.d = d;
        e.intervened = std::move(j);
        e.observed.reserve(d - e.intervened.size());
        for (int i = 0; i < d; ++i)
            if (!std::binary_search(e.intervened.begin(), e.intervened.end(), i))
                e.observed.push_back(i);
        return e;
    }

    bool is_observational() const { return intervened.empty(); }

    bool is_intervened(int node) const {
        return std::binary_search(intervened.begin(), intervened.end(), node);
    }

    /// Diagonal selector matrix J (ones on intervened coordinates).
    Matrix j_matrix() const {
        Matrix m = Matrix::Zero(d, d);
        for (int i : intervened) m(i, i) = 1.0;
        return m;
    }

    /// Diagonal selector matrix U = I - J.
    Matrix u_matrix() const {
        Matrix m = Matrix::Zero(d, d);
        for (int i : observed) m(i, i) = 1.0;
        return m;
    }

    bool operator==(const Experiment& o) const {
        return d == o.d && intervened == o.intervened;
    }
};

/// An ordered set of experiments; at most one is purely observational.
struct ExperimentDesign {
    std::vector<Experiment> experiments;

    /// Index of the observational experiment, or -1 if none.
    int observational_index() const {
        for (std::size_t k = 0; k < experiments.size(); ++k)
            if (experiments[k].is_observational()) return static_cast<int>(k);
        return -1;
    }
};

/// Covariance of the intervention variables c; identity by default
/// (c ~ N(0, I) on the intervened coordinates).
struct InterventionSpec {
    Matrix sigma_c;

    static InterventionSpec identity(int d) {
        return InterventionSpec{Matrix::Identity(d, d)};
    }
};

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

/// Checks the model invariants: zero diagonal of B, symmetric sigma_e,
/// sigma_e PSD within eigenvalue tolerance -1e-10. Always returns a report.
inline ValidationReport validate_model(const CausalModel& model) {
    ValidationReport report;
    const int d = model.d;
    auto add = [&report](const std::string& msg) { report.violations.push_back(msg); };

    if (model.B.rows() != d || model.B.cols() != d)
        add("B is not d x d");
    if (model.sigma_e.rows() != d || model.sigma_e.cols() != d)
        add("SigmaE is not d x d");
    if (!report.ok()) return report;

    for (int i = 0; i < d; ++i) {
        if (model.B(i, i) != 0.0) {
            std::ostringstream os;
            os << "nonzero diagonal of B at (" << i << "," << i << ")";
            add(os.str());
        }
    }
    const double asym = (model.sigma_e - model.sigma_e.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10) {
        std::ostringstream os;
        os << "SigmaE not symmetric (max asymmetry " << asym << ")";
        add(os.str());
    } else {
        Eigen::SelfAdjointEigenSolver<Matrix> es(model.sigma_e);
        const double min_eig = es.eigenvalues().minCoeff();
        if (min_eig < -1e-10) {
            std::ostringstream os;
            os << "SigmaE not PSD (min eigenvalue " << min_eig << ")";
            add(os.str());
        }
    }
    return report;
}

namespace detail {

inline double condition_number(const Matrix& m) {
    Eigen::JacobiSVD<Matrix> svd(m);
    const double smin = svd.singularValues().minCoeff();
    if (smin <= 0.0) return std::numeric_limits<double>::infinity();
    return svd.singularValues().maxCoeff() / smin;
}

}  // namespace detail

/// True iff I - U_k B is invertible in the floating-point sense:
/// |det| > 1e-10 and condition number < 1e12.
inline bool weakly_stable(const CausalModel& model, const Experiment& exp) {
    const Matrix m = Matrix::Identity(model.d, model.d) - exp.u_matrix() * model.B;
    if (std::abs(m.determinant()) <= 1e-10) return false;
    return detail::condition_number(m) < 1e12;
}

/// Observational experiment plus one single-node intervention per node:
/// d+1 experiments in total.
inline ExperimentDesign single_intervention_design(int d) {
    if (d < 2) throw std::invalid_argument("single_intervention_design: d must be >= 2");
    ExperimentDesign design;
    design.experiments.push_back(Experiment::observational(d));
    for (int k = 0; k < d; ++k)
        design.experiments.push_back(Experiment::intervene({k}, d));
    return design;
}

/// True iff every ordered pair (i, u), i != u, has an experiment with
/// i intervened and u observed. Guarantees full column rank of the
/// constraint system built from the design.
inline bool pair_condition(const ExperimentDesign& design, int d) {
    for (int i = 0; i < d; ++i) {
        for (int u = 0; u < d; ++u) {
            if (i == u) continue;
            bool covered = false;
            for (const Experiment& e : design.experiments) {
                if (e.is_intervened(i) && !e.is_intervened(u)) {
                    covered = true;
                    break;
                }
            }
            if (!covered) return false;
        }
    }
    return true;
}

/// Exact covariance of x under experiment (J_k, U_k):
///   C_x^k = (I - U_k B)^{-1} (U_k Sigma_e U_k + J_k Sigma_c J_k) (I - U_k B)^{-T}
inline Matrix population_covariance(const CausalModel& model, const Experiment& exp,
                                    const InterventionSpec& spec) {
    const int d = model.d;
    const Matrix u = exp.u_matrix();
    const Matrix j = exp.j_matrix();
    const Matrix m = Matrix::Identity(d, d) - u * model.B;
    if (std::abs(m.determinant()) <= 1e-10 || detail::condition_number(m) >= 1e12)
        throw std::domain_error("population_covariance: I - U_k B is not invertible");
    const Matrix inner = u * model.sigma_e * u + j * spec.sigma_c * j;
    Eigen::PartialPivLU<Matrix> lu(m);
    Matrix c = lu.solve(inner);
    c = lu.solve(c.transpose()).transpose().eval();
    return 0.5 * (c + c.transpose());
}

/// Exact total effects T^k = (U_k (I - U_k B)^{-1} J_k Sigma_c J_k)_{U_k J_k},
/// returned as an |U| x |J| matrix (rows in U order, columns in J order).
/// Equals the (U_k, J_k) submatrix of population_covariance.
inline Matrix population_total_effects(const CausalModel& model, const Experiment& exp,
                                       const InterventionSpec& spec) {
    if (exp.intervened.empty())
        throw std::invalid_argument("population_total_effects: experiment has empty J");
    const int d = model.d;
    const Matrix u = exp.u_matrix();
    const Matrix j = exp.j_matrix();
    const Matrix m = Matrix::Identity(d, d) - u * model.B;
    if (std::abs(m.determinant()) <= 1e-10 || detail::condition_number(m) >= 1e12)
        throw std::domain_error("population_total_effects: I - U_k B is not invertible");
    const Matrix full = u * m.inverse() * j * spec.sigma_c * j;
    Matrix t(exp.observed.size(), exp.intervened.size());
    for (std::size_t r = 0; r < exp.observed.size(); ++r)
        for (std::size_t c = 0; c < exp.intervened.size(); ++c)
            t(r, c) = full(exp.observed[r], exp.intervened[c]);
    return t;
}

/// Largest |eigenvalue| of B.
inline double spectral_radius(const Matrix& b) {
    Eigen::EigenSolver<Matrix> es(b, /*computeEigenvectors=*/false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Draws a random weakly stable model.
///
/// Each off-diagonal b_ij is nonzero with probability edge_prob, with
/// magnitude uniform on [0.2, 0.9] and random sign. Sigma_e starts from
/// diagonal variances uniform on [0.5, 1.5]; each confounder pair (i, j),
/// i < j, is present with probability conf_prob and contributes covariance
/// rho * sqrt(s_ii s_jj) with |rho| uniform on [0.3, 0.8]; the result is
/// projected to PSD by clipping eigenvalues at 1e-6 when needed.
///
/// Candidates are rejected until B has spectral radius < 0.95 and the model
/// is weakly stable under every experiment of single_intervention_design(d).
inline CausalModel random_model(int d, double edge_prob, double conf_prob, Rng& rng,
                                int max_attempts = 1000) {
    if (d < 2) throw std::invalid_argument("random_model: d must be >= 2");
    if (edge_prob < 0.0 || edge_prob > 1.0 || conf_prob < 0.0 || conf_prob > 1.0)
        throw std::invalid_argument("random_model: probabilities must be in [0, 1]");

    std::uniform_real_distribution<double> unif01(0.0, 1.0);
    std::uniform_real_distribution<double> edge_mag(0.2, 0.9);
    std::uniform_real_distribution<double> conf_mag(0.3, 0.8);
    const ExperimentDesign probe = single_intervention_design(d);

    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        CausalModel model;
        model.d = d;
        model.B = Matrix::Zero(d, d);
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) {
                if (i == j) continue;
                if (unif01(rng) < edge_prob) {
                    const double mag = edge_mag(rng);
                    model.B(i, j) = (unif01(rng) < 0.5) ? mag : -mag;
                }
            }
        }

        Vector var(d);
        for (int i = 0; i < d; ++i) var(i) = 0.5 + unif01(rng);
        model.sigma_e = var.asDiagonal();
        for (int i = 0; i < d; ++i) {
            for (int j = i + 1; j < d; ++j) {
                if (unif01(rng) < conf_prob) {
                    const double rho = (unif01(rng) < 0.5 ? 1.0 : -1.0) * conf_mag(rng);
                    const double cov = rho * std::sqrt(var(i) * var(j));
                    model.sigma_e(i, j) = cov;
                    model.sigma_e(j, i) = cov;
                }
            }
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(model.sigma_e);
        if (es.eigenvalues().minCoeff() < 1e-6) {
            const Vector clipped = es.eigenvalues().cwiseMax(1e-6);
            Matrix s = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
            model.sigma_e = 0.5 * (s + s.transpose());
        }

        if (spectral_radius(model.B) >= 0.95) continue;
        bool stable = true;
        for (const Experiment& e : probe.experiments) {
            if (!weakly_stable(model, e)) {
                stable = false;
                break;
            }
        }
        if (!stable) continue;
        return model;
    }
    std::ostringstream os;
    os << "random_model: no weakly stable model after " << max_attempts
       << " attempts (d=" << d << ", edge_prob=" << edge_prob
       << ", conf_prob=" << conf_prob << ")";
    throw std::runtime_error(os.str());
}

}  // namespace robllc
