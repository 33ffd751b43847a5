#pragma once

#include "robllc/simulate.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace robllc {

enum class CovMethod { Scm, Mcd, Gde };

inline std::string to_string(CovMethod m) {
    switch (m) {
        case CovMethod::Scm: return "scm";
        case CovMethod::Mcd: return "mcd";
        case CovMethod::Gde: return "gde";
    }
    throw std::logic_error("unknown covariance method");
}

// Location/scatter estimate with the metadata of whichever back end produced
// it. subset/h are filled by MCD, weights/iterations/objective by GDE.
struct CovEstimate {
    Vector mean;
    Matrix cov;
    CovMethod method = CovMethod::Scm;
    std::vector<int> subset;
    int h = 0;
    Vector weights;
    int iterations = 0;
    double objective = 0.0;
    bool converged = true;
    std::vector<double> objective_trace;
};

struct McdConfig {
    double alpha = 0.5;
    int n_starts = 50;
    int max_csteps = 30;

    void check() const {
        if (alpha < 0.5 || alpha > 1.0)
            throw std::invalid_argument("mcd subset fraction must lie in [0.5, 1]");
        if (n_starts < 1) throw std::invalid_argument("mcd needs at least one start");
        if (max_csteps < 0) throw std::invalid_argument("negative refinement cap");
    }
};

enum class GdeInit { Scm, Mcd };

struct GdeConfig {
    double gamma = 0.3;
    double tol = 1e-8;
    int max_iter = 500;
    GdeInit init = GdeInit::Scm;

    void check() const {
        if (!(gamma > 0.0)) throw std::invalid_argument("divergence parameter must be positive");
        if (!(tol > 0.0)) throw std::invalid_argument("convergence threshold must be positive");
        if (max_iter < 1) throw std::invalid_argument("iteration cap must be positive");
    }
};

inline CovEstimate scm(const Sample& sample) {
    const int n = sample.n;
    if (n < 2) throw std::invalid_argument("covariance needs at least two rows");
    CovEstimate est;
    est.method = CovMethod::Scm;
    est.mean = sample.data.colwise().mean().transpose();
    const Matrix centered = sample.data.rowwise() - est.mean.transpose();
    Matrix c = centered.transpose() * centered / static_cast<double>(n - 1);
    est.cov = 0.5 * (c + c.transpose());
    return est;
}

inline int mcd_subset_size(int n, int d, double alpha) {
    if (alpha < 0.5 || alpha > 1.0)
        throw std::invalid_argument("mcd subset fraction must lie in [0.5, 1]");
    int h;
    if (std::abs(alpha - 0.5) < 1e-12)
        h = (n + d + 1) / 2;
    else
        h = static_cast<int>(std::ceil(alpha * n - 1e-9));
    return std::clamp(h, std::min(d + 1, n), n);
}

// Scales a raw best-subset covariance so it is consistent for the normal
// population covariance; equals 1 when the subset is the whole sample.
inline double mcd_consistency_factor(int h, int n, int d) {
    if (h >= n) return 1.0;
    const double frac = static_cast<double>(h) / n;
    boost::math::chi_squared chi_d(d);
    boost::math::chi_squared chi_d2(d + 2);
    const double q = boost::math::quantile(chi_d, frac);
    return frac / boost::math::cdf(chi_d2, q);
}

namespace detail {

struct SubsetMoments {
    Vector mean;
    Matrix cov;
};

inline SubsetMoments subset_moments(const Matrix& data, const std::vector<int>& subset) {
    const int h = static_cast<int>(subset.size());
    const int d = static_cast<int>(data.cols());
    if (h < 2) throw std::invalid_argument("subset too small for a covariance");
    Vector mean = Vector::Zero(d);
    for (int i : subset) mean += data.row(i).transpose();
    mean /= static_cast<double>(h);
    Matrix cov = Matrix::Zero(d, d);
    for (int i : subset) {
        const Vector v = data.row(i).transpose() - mean;
        cov.noalias() += v * v.transpose();
    }
    cov /= static_cast<double>(h - 1);
    cov = 0.5 * (cov + cov.transpose()).eval();
    return {std::move(mean), std::move(cov)};
}

// Log-determinant through a Cholesky factorization; quiet NaN when the matrix
// is not numerically positive definite.
inline double logdet_spd(const Matrix& cov) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
    const Matrix l = llt.matrixL();
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
        if (!(l(i, i) > 0.0)) return std::numeric_limits<double>::quiet_NaN();
        logdet += 2.0 * std::log(l(i, i));
    }
    return logdet;
}

inline Vector squared_mahalanobis(const Matrix& data, const Vector& mean, const Matrix& cov) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success)
        throw std::domain_error("singular covariance in distance computation");
    const Matrix centered = (data.rowwise() - mean.transpose()).transpose();
    const Matrix solved = llt.solve(centered);
    return (centered.array() * solved.array()).colwise().sum().transpose();
}

inline double binomial_capped(int n, int k, double cap) {
    k = std::min(k, n - k);
    if (k < 0) return 0.0;
    double v = 1.0;
    for (int i = 1; i <= k; ++i) {
        v *= static_cast<double>(n - k + i) / i;
        if (v > cap) return cap + 1.0;
    }
    return v;
}

inline std::vector<int> smallest_h_by_distance(const Vector& dist, int h) {
    const int n = static_cast<int>(dist.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (dist(a) != dist(b)) return dist(a) < dist(b);
        return a < b;
    });
    order.resize(h);
    std::sort(order.begin(), order.end());
    return order;
}

}  // namespace detail

inline std::vector<int> c_step(const Sample& sample, const std::vector<int>& subset) {
    const auto mom = detail::subset_moments(sample.data, subset);
    const Vector dist = detail::squared_mahalanobis(sample.data, mom.mean, mom.cov);
    return detail::smallest_h_by_distance(dist, static_cast<int>(subset.size()));
}

namespace detail {

struct SubsetSearch {
    std::vector<int> subset;
    double logdet = std::numeric_limits<double>::quiet_NaN();
};

inline SubsetSearch refine_subset(const Sample& sample, std::vector<int> subset, int max_steps) {
    double logdet = logdet_spd(subset_moments(sample.data, subset).cov);
    for (int step = 0; step < max_steps; ++step) {
        if (std::isnan(logdet)) break;
        std::vector<int> next = c_step(sample, subset);
        const double next_logdet = logdet_spd(subset_moments(sample.data, next).cov);
        if (std::isnan(next_logdet)) break;
        const bool stalled = next_logdet >= logdet - 1e-12 * std::max(1.0, std::abs(logdet));
        subset = std::move(next);
        logdet = next_logdet;
        if (stalled) break;
    }
    return {std::move(subset), logdet};
}

}  // namespace detail

// Exhaustive minimization of the subset-covariance determinant over all
// h-subsets. Intended for instances where the subset count is small.
inline CovEstimate mcd_exhaustive(const Sample& sample, int h) {
    const int n = sample.n;
    const int d = sample.data.cols();
    if (h <= d || h > n) throw std::invalid_argument("subset size must satisfy d < h <= n");

    std::vector<int> comb(h);
    std::iota(comb.begin(), comb.end(), 0);
    std::vector<int> best;
    double best_logdet = std::numeric_limits<double>::infinity();
    bool any_valid = false;
    while (true) {
        const double logdet = detail::logdet_spd(detail::subset_moments(sample.data, comb).cov);
        if (!std::isnan(logdet)) {
            any_valid = true;
            if (logdet < best_logdet) {
                best_logdet = logdet;
                best = comb;
            }
        }
        int i = h - 1;
        while (i >= 0 && comb[i] == n - h + i) --i;
        if (i < 0) break;
        ++comb[i];
        for (int j = i + 1; j < h; ++j) comb[j] = comb[j - 1] + 1;
    }
    if (!any_valid)
        throw std::runtime_error("degenerate data: every candidate subset is singular");

    auto mom = detail::subset_moments(sample.data, best);
    CovEstimate est;
    est.method = CovMethod::Mcd;
    est.mean = std::move(mom.mean);
    est.cov = std::move(mom.cov);
    est.subset = std::move(best);
    est.h = h;
    return est;
}

// Randomized search: many small starts, two refinement steps each, full
// refinement of the best few.
inline CovEstimate mcd_fast(const Sample& sample, int h, const McdConfig& cfg, Rng& rng) {
    const int n = sample.n;
    const int d = sample.data.cols();
    if (h <= d || h > n) throw std::invalid_argument("subset size must satisfy d < h <= n");

    constexpr int keep_best = 10;
    std::vector<detail::SubsetSearch> candidates;
    std::vector<int> indices(n);
    for (int start = 0; start < cfg.n_starts; ++start) {
        std::iota(indices.begin(), indices.end(), 0);
        int picked = 0;
        std::vector<int> seed_subset;
        seed_subset.reserve(d + 1);
        while (picked < n) {
            std::uniform_int_distribution<int> pick(picked, n - 1);
            std::swap(indices[picked], indices[pick(rng)]);
            seed_subset.push_back(indices[picked]);
            ++picked;
            if (picked < d + 1) continue;
            std::vector<int> sorted = seed_subset;
            std::sort(sorted.begin(), sorted.end());
            if (!std::isnan(detail::logdet_spd(detail::subset_moments(sample.data, sorted).cov))) {
                seed_subset = std::move(sorted);
                break;
            }
        }
        if (picked == n &&
            std::isnan(detail::logdet_spd(detail::subset_moments(sample.data, seed_subset).cov)))
            continue;

        const auto mom = detail::subset_moments(sample.data, seed_subset);
        Vector dist;
        try {
            dist = detail::squared_mahalanobis(sample.data, mom.mean, mom.cov);
        } catch (const std::domain_error&) {
            continue;
        }
        auto expanded = detail::smallest_h_by_distance(dist, h);
        candidates.push_back(detail::refine_subset(sample, std::move(expanded), 2));
    }
    candidates.erase(std::remove_if(candidates.begin(), candidates.end(),
                                    [](const detail::SubsetSearch& c) { return std::isnan(c.logdet); }),
                     candidates.end());
    if (candidates.empty())
        throw std::runtime_error("degenerate data: every candidate subset is singular");

    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const detail::SubsetSearch& a, const detail::SubsetSearch& b) {
                         return a.logdet < b.logdet;
                     });
    if (static_cast<int>(candidates.size()) > keep_best) candidates.resize(keep_best);

    detail::SubsetSearch best;
    best.logdet = std::numeric_limits<double>::infinity();
    for (const auto& cand : candidates) {
        auto refined = detail::refine_subset(sample, cand.subset, cfg.max_csteps);
        if (!std::isnan(refined.logdet) && refined.logdet < best.logdet) best = std::move(refined);
    }
    if (!std::isfinite(best.logdet))
        throw std::runtime_error("degenerate data: every candidate subset is singular");

    auto mom = detail::subset_moments(sample.data, best.subset);
    CovEstimate est;
    est.method = CovMethod::Mcd;
    est.mean = std::move(mom.mean);
    est.cov = std::move(mom.cov);
    est.subset = std::move(best.subset);
    est.h = h;
    return est;
}

inline CovEstimate mcd(const Sample& sample, const McdConfig& cfg, Rng& rng) {
    cfg.check();
    const int n = sample.n;
    const int d = sample.data.cols();
    if (n <= d) throw std::invalid_argument("need more rows than columns");
    const int h = mcd_subset_size(n, d, cfg.alpha);

    if (h == n) {
        CovEstimate est = scm(sample);
        est.method = CovMethod::Mcd;
        est.subset.resize(n);
        std::iota(est.subset.begin(), est.subset.end(), 0);
        est.h = n;
        return est;
    }

    constexpr double exhaustive_limit = 1e5;
    CovEstimate est = detail::binomial_capped(n, h, exhaustive_limit) <= exhaustive_limit
                          ? mcd_exhaustive(sample, h)
                          : mcd_fast(sample, h, cfg, rng);
    est.cov *= mcd_consistency_factor(h, n, d);
    return est;
}

// Value of the divergence objective at (mean, cov); the model-integral term
// uses the closed form for the normal family.
inline double gamma_objective(const Sample& sample, const Vector& mean, const Matrix& cov,
                              double gamma) {
    if (!(gamma > 0.0)) throw std::invalid_argument("divergence parameter must be positive");
    const int n = sample.n;
    const int d = sample.data.cols();
    const double logdet = detail::logdet_spd(cov);
    if (std::isnan(logdet)) throw std::domain_error("covariance is not positive definite");

    const Vector d2 = detail::squared_mahalanobis(sample.data, mean, cov);
    const double log_norm = -0.5 * d * std::log(2.0 * M_PI) - 0.5 * logdet;
    Vector scaled = gamma * (log_norm - 0.5 * d2.array()).matrix();
    const double top = scaled.maxCoeff();
    const double log_mean_pow =
        top + std::log((scaled.array() - top).exp().sum() / static_cast<double>(n));

    const double log_integral = -0.5 * d * std::log1p(gamma) -
                                0.5 * d * gamma * std::log(2.0 * M_PI) - 0.5 * gamma * logdet;
    return -log_mean_pow / gamma + log_integral / (1.0 + gamma);
}

namespace detail {

struct GdeUpdate {
    Vector mean;
    Matrix cov;
    Vector weights;
};

inline GdeUpdate gde_step(const Matrix& data, const Vector& mean, const Matrix& cov,
                          double gamma) {
    const double logdet = logdet_spd(cov);
    if (std::isnan(logdet)) throw std::domain_error("covariance collapsed during iteration");
    const Vector d2 = squared_mahalanobis(data, mean, cov);
    Vector logw = (-0.5 * gamma) * d2;
    const double top = logw.maxCoeff();
    Vector w = (logw.array() - top).exp();
    w /= w.sum();

    const int d = static_cast<int>(data.cols());
    Vector new_mean = data.transpose() * w;
    Matrix new_cov = Matrix::Zero(d, d);
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        const Vector v = data.row(i).transpose() - new_mean;
        new_cov.noalias() += w(i) * v * v.transpose();
    }
    new_cov *= 1.0 + gamma;
    new_cov = 0.5 * (new_cov + new_cov.transpose()).eval();
    return {std::move(new_mean), std::move(new_cov), std::move(w)};
}

}  // namespace detail

namespace detail {

// Runs the descent from (mean, cov). When allow_restart is true and the
// objective rises or the scatter collapses, the caller-provided fallback point
// replaces the current iterate once.
template <typename Fallback>
inline CovEstimate gde_iterate(const Sample& sample, const GdeConfig& cfg, Vector mean,
                               Matrix cov, bool allow_restart, Fallback&& fallback,
                               bool* used_restart) {
    CovEstimate est;
    est.method = CovMethod::Gde;
    est.objective_trace = {gamma_objective(sample, mean, cov, cfg.gamma)};
    est.converged = false;

    bool restarted = !allow_restart;
    const auto restart = [&]() {
        restarted = true;
        if (used_restart) *used_restart = true;
        CovEstimate r = fallback();
        mean = std::move(r.mean);
        cov = std::move(r.cov);
        est.objective_trace = {gamma_objective(sample, mean, cov, cfg.gamma)};
    };

    int iter = 0;
    while (iter < cfg.max_iter) {
        GdeUpdate next;
        double objective;
        try {
            next = gde_step(sample.data, mean, cov, cfg.gamma);
            objective = gamma_objective(sample, next.mean, next.cov, cfg.gamma);
        } catch (const std::domain_error&) {
            if (restarted) throw;
            restart();
            continue;
        }
        const double prev = est.objective_trace.back();
        if (!restarted && objective > prev + 1e-10 * std::max(1.0, std::abs(prev))) {
            restart();
            continue;
        }

        const double delta = std::max((next.mean - mean).cwiseAbs().maxCoeff(),
                                      (next.cov - cov).cwiseAbs().maxCoeff());
        mean = std::move(next.mean);
        cov = std::move(next.cov);
        est.weights = std::move(next.weights);
        est.objective_trace.push_back(objective);
        ++iter;
        if (delta < cfg.tol) {
            est.converged = true;
            break;
        }
    }

    est.mean = std::move(mean);
    est.cov = std::move(cov);
    est.iterations = iter;
    est.objective = est.objective_trace.back();
    return est;
}

}  // namespace detail

// Fixed-point iteration minimizing the divergence objective over the normal
// family. Starts from the plain sample estimate by default; when the
// high-breakdown start point scores better than the reached fixed point, the
// descent reruns once from there and the lower-objective result is kept.
inline CovEstimate gde(const Sample& sample, const GdeConfig& cfg) {
    cfg.check();
    const int n = sample.n;
    const int d = sample.data.cols();
    if (n <= d) throw std::invalid_argument("need more rows than columns");

    const auto robust_init = [&]() {
        Rng rng(1);
        return mcd(sample, McdConfig{}, rng);
    };

    if (cfg.init == GdeInit::Mcd) {
        CovEstimate start = robust_init();
        return detail::gde_iterate(sample, cfg, std::move(start.mean), std::move(start.cov),
                                   false, robust_init, nullptr);
    }

    CovEstimate plain = scm(sample);
    bool used_restart = false;
    CovEstimate est = detail::gde_iterate(sample, cfg, std::move(plain.mean),
                                          std::move(plain.cov), true, robust_init,
                                          &used_restart);
    if (used_restart) return est;

    CovEstimate robust = robust_init();
    const double robust_start = gamma_objective(sample, robust.mean, robust.cov, cfg.gamma);
    if (robust_start < est.objective - 1e-10 * std::max(1.0, std::abs(est.objective))) {
        CovEstimate retry = detail::gde_iterate(sample, cfg, std::move(robust.mean),
                                                std::move(robust.cov), false, robust_init,
                                                nullptr);
        if (retry.objective < est.objective) return retry;
    }
    return est;
}

}  // namespace robllc
