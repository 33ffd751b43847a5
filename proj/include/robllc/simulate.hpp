// Finite-sample simulation of interventional experiments and replacement
// contamination of the measurements (x), the disturbances (e), or the
// intervention variables (c).
#pragma once

#include "robllc/model.hpp"

#include <random>
#include <stdexcept>
#include <vector>

namespace robllc {

/// n realizations of x under one experiment, one row per observation.
struct Sample {
    Experiment experiment;
    Matrix data;  // n x d
    int n = 0;
};

enum class ContaminationTarget { X, E, C };

inline const char* to_string(ContaminationTarget t) {
    switch (t) {
        case ContaminationTarget::X: return "x";
        case ContaminationTarget::E: return "e";
        case ContaminationTarget::C: return "c";
    }
    return "?";
}

/// Replacement contamination: a fraction `rate` of the rows is replaced by
/// outliers drawn from N(outlier_location * 1, outlier_scale^2 * I) in the
/// targeted coordinates.
struct ContaminationSpec {
    double rate = 0.0;
    ContaminationTarget target = ContaminationTarget::X;
    double outlier_location = 10.0;
    double outlier_scale = 1.0;

    void check() const {
        if (rate < 0.0 || rate >= 1.0)
            throw std::invalid_argument("ContaminationSpec: rate must be in [0, 1)");
        if (outlier_scale <= 0.0)
            throw std::invalid_argument("ContaminationSpec: scale must be positive");
    }
};

namespace detail {

/// Symmetric PSD square root via eigendecomposition, clamping tiny negative
/// eigenvalues to zero.
inline Matrix psd_sqrt(const Matrix& sigma) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sigma);
    const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Draws n rows of x = (I - U_k B)^{-1} (U_k e + J_k c) with e ~ N(0, Sigma_e)
/// and c ~ N(0, Sigma_c). The intervened coordinates of each row equal the
/// corresponding c draws exactly. Deterministic given the generator state.
inline Sample draw_sample(const CausalModel& model, const Experiment& exp, int n,
                          const InterventionSpec& spec, Rng& rng) {
    if (n < 1) throw std::invalid_argument("draw_sample: n must be >= 1");
    const int d = model.d;
    if (spec.sigma_c.rows() != d || spec.sigma_c.cols() != d)
        throw std::invalid_argument("draw_sample: sigma_c is not d x d");
    const Matrix u = exp.u_matrix();
    const Matrix j = exp.j_matrix();
    const Matrix m = Matrix::Identity(d, d) - u * model.B;
    if (std::abs(m.determinant()) <= 1e-10 || detail::condition_number(m) >= 1e12)
        throw std::domain_error("draw_sample: I - U_k B is not invertible");
    const Matrix m_inv = m.inverse();
    const Matrix root_e = detail::psd_sqrt(model.sigma_e);
    const Matrix root_c = detail::psd_sqrt(spec.sigma_c);

    std::normal_distribution<double> gauss(0.0, 1.0);
    Sample sample{exp, Matrix(n, d), n};
    Vector ze(d), zc(d);
    for (int i = 0; i < n; ++i) {
        for (int r = 0; r < d; ++r) ze(r) = gauss(rng);
        for (int r = 0; r < d; ++r) zc(r) = gauss(rng);
        sample.data.row(i) =
            (m_inv * (u * (root_e * ze) + j * (root_c * zc))).transpose();
    }
    return sample;
}

/// Replaces exactly floor(rate * n) rows of the sample with contaminated
/// versions.
///
/// target x: the row becomes a draw from N(mu 1, s^2 I).
/// target e: the row is re-simulated with its disturbance vector replaced by
///           an outlier draw on the non-intervened coordinates (the row's
///           original c is kept; it is recovered exactly from x).
/// target c: the row is re-simulated with the intervened coordinates of c
///           replaced by an outlier draw (the row's original e is kept).
inline Sample contaminate(const Sample& sample, const CausalModel& model,
                          const ContaminationSpec& spec, Rng& rng) {
    spec.check();
    if (spec.target == ContaminationTarget::C && sample.experiment.is_observational())
        throw std::invalid_argument(
            "contaminate: target c is undefined for the observational experiment");

    const int n = sample.n;
    const int d = model.d;
    const int m_rows = static_cast<int>(spec.rate * n);
    Sample out = sample;
    if (m_rows == 0) return out;

    // m distinct rows via partial Fisher-Yates, then processed in row order.
    std::vector<int> index(n);
    for (int i = 0; i < n; ++i) index[i] = i;
    for (int i = 0; i < m_rows; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(index[i], index[pick(rng)]);
    }
    std::vector<int> rows(index.begin(), index.begin() + m_rows);
    std::sort(rows.begin(), rows.end());

    const Matrix u = sample.experiment.u_matrix();
    const Matrix j = sample.experiment.j_matrix();
    const Matrix m = Matrix::Identity(d, d) - u * model.B;
    const Matrix m_inv = m.inverse();

    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector outlier(d);
    for (int r : rows) {
        for (int q = 0; q < d; ++q)
            outlier(q) = spec.outlier_location + spec.outlier_scale * gauss(rng);
        const Vector x = sample.data.row(r).transpose();
        switch (spec.target) {
            case ContaminationTarget::X:
                out.data.row(r) = outlier.transpose();
                break;
            case ContaminationTarget::E: {
                // U e is replaced; the row's c equals J x exactly.
                out.data.row(r) = (m_inv * (u * outlier + j * x)).transpose();
                break;
            }
            case ContaminationTarget::C: {
                // U e recovered from x: U e = (I - U B) x - J x.
                const Vector ue = m * x - j * x;
                out.data.row(r) = (m_inv * (u * ue + j * outlier)).transpose();
                break;
            }
        }
    }
    return out;
}

}  // namespace robllc
