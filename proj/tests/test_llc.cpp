#include "robllc/llc.hpp"

#include <gtest/gtest.h>

using namespace robllc;

namespace {

CovEstimate wrap_cov(Matrix cov) {
    CovEstimate est;
    est.mean = Vector::Zero(cov.rows());
    est.cov = std::move(cov);
    return est;
}

std::vector<CovEstimate> population_covariances(const CausalModel& m,
                                                const ExperimentDesign& design) {
    std::vector<CovEstimate> covs;
    for (const auto& exp : design.experiments)
        covs.push_back(wrap_cov(population_covariance(m, exp, InterventionSpec::identity(m.d))));
    return covs;
}

// Manual identity system with every block present, for direct solver checks.
ConstraintSystem identity_system(int d, const Vector& t) {
    ConstraintSystem sys;
    sys.d = d;
    const int cols = d * (d - 1);
    sys.T = Matrix::Identity(cols, cols);
    sys.t = t;
    for (int u = 0; u < d; ++u)
        for (int i = 0; i < d; ++i)
            if (i != u) {
                sys.col_index.push_back({u, i});
                sys.row_index.push_back({u, i, 0});
            }
    return sys;
}

}  // namespace

TEST(ExtractEffects, ZeroModelGivesZeroEffects) {
    CausalModel m{3, Matrix::Zero(3, 3), Matrix::Identity(3, 3)};
    auto exp = Experiment::intervene({1}, 3);
    auto cov = wrap_cov(population_covariance(m, exp, InterventionSpec::identity(3)));
    auto effects = extract_total_effects(cov, exp, 1);
    ASSERT_EQ(effects.size(), 2u);
    for (const auto& e : effects) {
        EXPECT_DOUBLE_EQ(e.value, 0.0);
        EXPECT_EQ(e.intervened, 1);
        EXPECT_EQ(e.experiment, 1);
    }
}

TEST(ExtractEffects, TwoNodeChain) {
    Matrix b = Matrix::Zero(2, 2);
    b(1, 0) = 0.5;
    CausalModel m{2, b, Matrix::Identity(2, 2)};
    auto exp = Experiment::intervene({0}, 2);
    auto cov = wrap_cov(population_covariance(m, exp, InterventionSpec::identity(2)));
    auto effects = extract_total_effects(cov, exp, 0);
    ASSERT_EQ(effects.size(), 1u);
    EXPECT_EQ(effects[0].observed, 1);
    EXPECT_EQ(effects[0].intervened, 0);
    EXPECT_NEAR(effects[0].value, 0.5, 1e-12);
}

TEST(ExtractEffects, UnitFeedbackLoop) {
    Matrix b(2, 2);
    b << 0, 1, 1, 0;
    CausalModel m{2, b, Matrix::Identity(2, 2)};
    auto exp = Experiment::intervene({0}, 2);
    auto cov = wrap_cov(population_covariance(m, exp, InterventionSpec::identity(2)));
    auto effects = extract_total_effects(cov, exp, 0);
    ASSERT_EQ(effects.size(), 1u);
    EXPECT_NEAR(effects[0].value, 1.0, 1e-12);
}

TEST(ExtractEffects, ObservationalGivesNothing) {
    auto cov = wrap_cov(Matrix::Identity(3, 3));
    EXPECT_TRUE(extract_total_effects(cov, Experiment::observational(3), 0).empty());
}

TEST(Assemble, TwoNodeIdentity) {
    auto design = single_intervention_design(2);
    std::vector<TotalEffect> effects = {{1, 0, 1, 0.6}, {0, 1, 2, -0.4}};
    auto sys = assemble_constraints(effects, design, 2);
    EXPECT_EQ(sys.T, Matrix::Identity(2, 2));
    EXPECT_DOUBLE_EQ(sys.t(0), -0.4);  // row for observed node 0
    EXPECT_DOUBLE_EQ(sys.t(1), 0.6);
    EXPECT_EQ(sys.col_index[0].observed, 0);
    EXPECT_EQ(sys.col_index[0].intervened, 1);
}

TEST(Assemble, ThreeNodeBlockStructure) {
    auto design = single_intervention_design(3);
    const double a = 0.1, b = 0.2, c = 0.3, dd = 0.4, e = 0.5, f = 0.6;
    std::vector<TotalEffect> effects = {
        {1, 0, 1, a}, {2, 0, 1, b},   // intervene node 0
        {0, 1, 2, c}, {2, 1, 2, dd},  // intervene node 1
        {0, 2, 3, e}, {1, 2, 3, f},   // intervene node 2
    };
    auto sys = assemble_constraints(effects, design, 3);
    ASSERT_EQ(sys.T.rows(), 6);
    ASSERT_EQ(sys.T.cols(), 6);

    Matrix expected = Matrix::Zero(6, 6);
    // columns: b01 b02 | b10 b12 | b20 b21
    expected.block(0, 0, 2, 2) << 1, dd, f, 1;
    expected.block(2, 2, 2, 2) << 1, b, e, 1;
    expected.block(4, 4, 2, 2) << 1, a, c, 1;
    EXPECT_LT((sys.T - expected).cwiseAbs().maxCoeff(), 1e-15);
    Vector t_expected(6);
    t_expected << c, e, a, f, b, dd;
    EXPECT_EQ(sys.t, t_expected);

    // nonzeros only inside the diagonal blocks
    for (int r = 0; r < 6; ++r)
        for (int col = 0; col < 6; ++col)
            if (r / 2 != col / 2) EXPECT_EQ(sys.T(r, col), 0.0);
}

TEST(Assemble, ZeroEffectsGiveIdentity) {
    auto design = single_intervention_design(3);
    std::vector<TotalEffect> effects;
    for (int k = 1; k <= 3; ++k) {
        const auto& exp = design.experiments[k];
        for (int u : exp.observed)
            for (int i : exp.intervened) effects.push_back({u, i, k, 0.0});
    }
    auto sys = assemble_constraints(effects, design, 3);
    EXPECT_EQ(sys.T, Matrix::Identity(6, 6));
    EXPECT_EQ(sys.t, Vector::Zero(6));
}

TEST(Assemble, MissingEffectSignalled) {
    auto design = single_intervention_design(3);
    std::vector<TotalEffect> effects = {
        {1, 0, 1, 0.1},  // its partner (2, 0, 1) is absent
        {0, 1, 2, 0.2}, {2, 1, 2, 0.3}, {0, 2, 3, 0.4}, {1, 2, 3, 0.5},
    };
    EXPECT_THROW(assemble_constraints(effects, design, 3), std::invalid_argument);
}

TEST(Solve, IdentityPassThrough) {
    Vector t(6);
    t << 1, -2, 3, -4, 5, -6;
    auto sys = identity_system(3, t);
    auto b = solve_b(sys, 0.0);
    EXPECT_DOUBLE_EQ(b(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(b(0, 2), -2.0);
    EXPECT_DOUBLE_EQ(b(1, 0), 3.0);
    EXPECT_DOUBLE_EQ(b(1, 2), -4.0);
    EXPECT_DOUBLE_EQ(b(2, 0), 5.0);
    EXPECT_DOUBLE_EQ(b(2, 1), -6.0);
    EXPECT_DOUBLE_EQ(b(0, 0), 0.0);
}

TEST(Solve, RidgeClosedForm) {
    Vector t(6);
    t << 1, -2, 3, -4, 5, -6;
    auto sys = identity_system(3, t);
    const double lambda = 0.7;
    auto b = solve_b(sys, lambda);
    Vector flat(6);
    flat << b(0, 1), b(0, 2), b(1, 0), b(1, 2), b(2, 0), b(2, 1);
    EXPECT_LT((flat - t / (1.0 + lambda)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(flat.norm(), t.norm() / (1.0 + lambda), 1e-12);
}

TEST(Solve, DuplicateRowsReconciled) {
    ExperimentDesign design;
    design.experiments = {Experiment::observational(2), Experiment::intervene({0}, 2),
                          Experiment::intervene({0}, 2), Experiment::intervene({1}, 2)};
    std::vector<TotalEffect> effects = {{1, 0, 1, 2.0}, {1, 0, 2, 4.0}, {0, 1, 3, 0.0}};
    auto sys = assemble_constraints(effects, design, 2);
    ASSERT_EQ(sys.T.rows(), 3);
    auto b = solve_b(sys, 0.0);
    EXPECT_NEAR(b(1, 0), 3.0, 1e-12);
}

TEST(SigmaE, IdentityWhenBZero) {
    Matrix cov(2, 2);
    cov << 1.5, 0.2, 0.2, 0.9;
    EXPECT_EQ(estimate_sigma_e(Matrix::Zero(2, 2), wrap_cov(cov)), cov);
}

TEST(SigmaE, RecoversTruthFromPopulationCovariance) {
    Rng rng(41);
    auto m = random_model(4, 0.4, 0.4, rng);
    auto cov0 = wrap_cov(
        population_covariance(m, Experiment::observational(4), InterventionSpec::identity(4)));
    EXPECT_LT((estimate_sigma_e(m.B, cov0) - m.sigma_e).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SigmaE, SymmetrizesOutput) {
    Matrix cov(2, 2);
    cov << 1.0, 0.3, 0.1, 1.0;
    auto s = estimate_sigma_e(Matrix::Zero(2, 2), wrap_cov(cov));
    EXPECT_EQ(s, s.transpose().eval());
}

TEST(Conditioning, IdentityIsWellConditioned) {
    auto sys = identity_system(3, Vector::Zero(6));
    auto report = condition_diagnostics(sys);
    EXPECT_FALSE(report.flag);
    for (double c : report.block_condition) EXPECT_DOUBLE_EQ(c, 1.0);
}

TEST(Conditioning, ReciprocalEffectsSingular) {
    auto design = single_intervention_design(3);
    std::vector<TotalEffect> effects = {
        {1, 0, 1, 0.0}, {2, 0, 1, 0.0},
        {0, 1, 2, 0.0}, {2, 1, 2, 2.0},
        {0, 2, 3, 0.0}, {1, 2, 3, 0.5},
    };
    auto sys = assemble_constraints(effects, design, 3);
    auto report = condition_diagnostics(sys);
    EXPECT_TRUE(report.flag);
    EXPECT_TRUE(std::isinf(report.block_condition[0]));

    effects[5].value = 0.5 + 1e-9;
    auto nearly = condition_diagnostics(assemble_constraints(effects, design, 3));
    EXPECT_TRUE(nearly.flag);
    EXPECT_GT(nearly.block_condition[0], 1e8);
    EXPECT_TRUE(std::isfinite(nearly.block_condition[0]));
}

TEST(Fit, PopulationOracleRecovery) {
    int checked = 0;
    for (int d : {3, 4, 5}) {
        for (std::uint64_t seed = 1; seed <= 7; ++seed) {
            Rng rng(derive_seed(900, {static_cast<std::uint64_t>(d), seed}));
            auto m = random_model(d, 0.4, 0.3, rng);
            auto design = single_intervention_design(d);
            auto est = llc_fit_covariances(population_covariances(m, design), design, d);
            EXPECT_LT((est.b_hat - m.B).cwiseAbs().maxCoeff(), 1e-8)
                << "d=" << d << " seed=" << seed;
            EXPECT_LT((est.sigma_e_hat - m.sigma_e).cwiseAbs().maxCoeff(), 1e-8)
                << "d=" << d << " seed=" << seed;
            ++checked;
        }
    }
    EXPECT_EQ(checked, 21);
}

TEST(Fit, RelabelingEquivariance) {
    Rng rng(77);
    auto m = random_model(3, 0.5, 0.4, rng);
    const std::vector<int> perm = {1, 2, 0};  // new label of each old node
    Matrix p = Matrix::Zero(3, 3);
    for (int i = 0; i < 3; ++i) p(perm[i], i) = 1.0;
    CausalModel relabeled{3, p * m.B * p.transpose(), p * m.sigma_e * p.transpose()};

    auto design = single_intervention_design(3);
    const double lambda = 0.3;
    auto base = llc_fit_covariances(population_covariances(m, design), design, 3, lambda);
    auto moved =
        llc_fit_covariances(population_covariances(relabeled, design), design, 3, lambda);
    EXPECT_LT((moved.b_hat - p * base.b_hat * p.transpose()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((moved.sigma_e_hat - p * base.sigma_e_hat * p.transpose()).cwiseAbs().maxCoeff(),
              1e-9);
}

TEST(Fit, NullModelLargeSample) {
    CausalModel m{3, Matrix::Zero(3, 3), Matrix::Identity(3, 3)};
    auto design = single_intervention_design(3);
    std::vector<Sample> samples;
    Rng rng(88);
    for (const auto& exp : design.experiments)
        samples.push_back(draw_sample(m, exp, 100000, InterventionSpec::identity(3), rng));
    auto est = llc_fit(samples, design, CovBackend{});
    EXPECT_LT(est.b_hat.norm(), 0.05);
    EXPECT_LT((est.sigma_e_hat - m.sigma_e).norm() / m.sigma_e.norm(), 0.05);
    EXPECT_FALSE(est.diagnostics.ill_conditioned);
}

TEST(Fit, SingleScaledRowUnboundedGrowth) {
    Rng rng(5);
    auto m = random_model(2, 0.9, 0.5, rng);
    auto design = single_intervention_design(2);
    std::vector<Sample> samples;
    Rng draw(6);
    for (const auto& exp : design.experiments)
        samples.push_back(draw_sample(m, exp, 500, InterventionSpec::identity(2), draw));

    double prev = 0.0;
    for (double s : {1e2, 1e4, 1e6}) {
        auto corrupted = samples;
        corrupted[1].data.row(0) *= s;
        auto est = llc_fit(corrupted, design, CovBackend{});
        const double norm = est.b_hat.norm();
        EXPECT_GT(norm, prev);
        prev = norm;
    }
    EXPECT_GT(prev, 1e2);
}

TEST(Fit, BackendFailureNamesExperiment) {
    CausalModel m{2, Matrix::Zero(2, 2), Matrix::Identity(2, 2)};
    auto design = single_intervention_design(2);
    std::vector<Sample> samples;
    Rng rng(9);
    for (const auto& exp : design.experiments)
        samples.push_back(draw_sample(m, exp, 60, InterventionSpec::identity(2), rng));
    samples[1].data.setOnes();
    CovBackend backend;
    backend.method = CovMethod::Mcd;
    try {
        llc_fit(samples, design, backend);
        FAIL() << "expected a backend failure";
    } catch (const std::runtime_error& err) {
        EXPECT_NE(std::string(err.what()).find("experiment 1"), std::string::npos);
    }
}

TEST(Fit, ValidatesInputs) {
    CausalModel m{2, Matrix::Zero(2, 2), Matrix::Identity(2, 2)};
    auto design = single_intervention_design(2);
    std::vector<Sample> samples;
    Rng rng(3);
    for (const auto& exp : design.experiments)
        samples.push_back(draw_sample(m, exp, 30, InterventionSpec::identity(2), rng));

    std::vector<Sample> missing = {samples[0], samples[1]};
    ExperimentDesign truncated;
    truncated.experiments = {design.experiments[0], design.experiments[1]};
    EXPECT_THROW(llc_fit(missing, truncated, CovBackend{}), std::invalid_argument);

    ExperimentDesign no_obs;
    no_obs.experiments = {design.experiments[1], design.experiments[2]};
    std::vector<Sample> swapped = {samples[1], samples[2]};
    EXPECT_THROW(llc_fit(swapped, no_obs, CovBackend{}), std::invalid_argument);

    std::vector<Sample> shuffled = {samples[0], samples[2], samples[1]};
    EXPECT_THROW(llc_fit(shuffled, design, CovBackend{}), std::invalid_argument);
}
