#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "panelgee/engine.hpp"
#include "panelgee/errors.hpp"
#include "panelgee/simulate.hpp"
#include "support.hpp"

using namespace panelgee;
using testsupport::clustered_dataset;
using testsupport::singleton_dataset;

namespace {

ModelSpec spec_with(CorrelationKind kind) {
    ModelSpec spec;
    spec.name = "test";
    spec.corr = {kind, 0.0};
    return spec;
}

}  // namespace

TEST_CASE("intercept-only Poisson MLE is the log of the mean") {
    const auto ds = singleton_dataset({1.0, 2.0, 3.0});
    const Eigen::VectorXd beta = irls_glm(ds);
    CHECK(beta(0) == doctest::Approx(std::log(2.0)).epsilon(1e-10));
}

TEST_CASE("offsets act as exposure: beta is the log of the weighted mean") {
    const auto ds = singleton_dataset({2.0, 4.0}, {std::log(1.0), std::log(2.0)});
    const Eigen::VectorXd beta = irls_glm(ds);
    CHECK(beta(0) == doctest::Approx(std::log(2.0)).epsilon(1e-10));
}

TEST_CASE("constant response converges immediately to log c") {
    const auto ds = singleton_dataset({7.5, 7.5, 7.5, 7.5});
    const Eigen::VectorXd beta = irls_glm(ds);
    CHECK(beta(0) == doctest::Approx(std::log(7.5)).epsilon(1e-12));
}

TEST_CASE("rank-deficient design names the offending columns") {
    // Second column duplicates the intercept.
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(4, 2);
    Eigen::VectorXd y(4);
    y << 1, 2, 3, 4;
    const auto ds = clustered_dataset({y}, {X});
    CHECK_THROWS_WITH_AS(irls_glm(ds), doctest::Contains("zero variance"), AnalysisError);
}

TEST_CASE("pearson residuals") {
    const auto ds = singleton_dataset({4.0, 0.0});
    // mu = 1 and 4 via beta = 0 with offsets
    const auto ds2 = singleton_dataset({4.0, 0.0}, {std::log(1.0), std::log(4.0)});
    const auto res = pearson_residuals(ds2, Eigen::VectorXd::Zero(1));
    CHECK(res[0](0) == doctest::Approx(3.0));   // (4-1)/1
    CHECK(res[1](0) == doctest::Approx(-2.0));  // (0-4)/2

    const auto res_zero = pearson_residuals(ds, irls_glm(ds));
    (void)res_zero;
}

TEST_CASE("y equal to mu gives zero residuals") {
    const auto ds = singleton_dataset({2.0, 2.0}, {0.0, 0.0});
    const auto res = pearson_residuals(ds, Eigen::VectorXd::Constant(1, std::log(2.0)));
    CHECK(res[0](0) == doctest::Approx(0.0));
    CHECK(res[1](0) == doctest::Approx(0.0));
}

TEST_CASE("dispersion moment estimator") {
    std::vector<Eigen::VectorXd> res;
    Eigen::VectorXd e(4);
    e << 1, -1, 1, -1;
    res.push_back(e);
    CHECK(estimate_phi(res, 4, 0) == doctest::Approx(1.0));

    std::vector<Eigen::VectorXd> res2;
    Eigen::VectorXd e2(2);
    e2 << 3, -2;
    res2.push_back(e2);
    CHECK(estimate_phi(res2, 2, 1) == doctest::Approx(13.0));

    CHECK_THROWS_AS(estimate_phi(res2, 1, 1), AnalysisError);

    std::vector<Eigen::VectorXd> zeros{Eigen::VectorXd::Zero(3)};
    CHECK(estimate_phi(zeros, 3, 0) == 0.0);
}

TEST_CASE("exchangeable alpha moment estimator clamps at the boundary") {
    Eigen::VectorXd e1(2), e2(2);
    e1 << 1, 1;
    e2 << -1, -1;
    std::vector<Eigen::VectorXd> res{e1, e2};
    Eigen::VectorXd ya(2), yb(2);
    ya << 1, 1;
    yb << 1, 1;
    const auto ds = clustered_dataset({ya, yb}, {Eigen::MatrixXd::Ones(2, 1),
                                                 Eigen::MatrixXd::Ones(2, 1)});
    const auto est = estimate_alpha(res, ds, 0, 1.0, CorrelationKind::exchangeable);
    CHECK(est.alpha == doctest::Approx(1.0 - 1e-6));
    CHECK(est.clamped);
}

TEST_CASE("anti-correlated and orthogonal residual pairs") {
    Eigen::VectorXd e1(2), e2(2);
    e1 << 1, -1;
    e2 << -1, 1;
    std::vector<Eigen::VectorXd> res{e1, e2};
    Eigen::VectorXd y(2);
    y << 1, 1;
    const auto ds = clustered_dataset({y, y}, {Eigen::MatrixXd::Ones(2, 1),
                                               Eigen::MatrixXd::Ones(2, 1)});
    // pair products are -1 each: the raw moment is -1, clamped to the lower
    // exchangeable bound -1/(n_max - 1) = -1.
    const auto est = estimate_alpha(res, ds, 0, 1.0, CorrelationKind::exchangeable);
    CHECK(est.alpha == doctest::Approx(-1.0 + 1e-6));
    CHECK(est.clamped);
    // all pair products zero:
    Eigen::VectorXd z1(2), z2(2);
    z1 << 1, 0;
    z2 << 0, 1;
    std::vector<Eigen::VectorXd> res2{z1, z2};
    const auto est2 = estimate_alpha(res2, ds, 0, 1.0, CorrelationKind::exchangeable);
    CHECK(est2.alpha == doctest::Approx(0.0));
}

TEST_CASE("alpha is not estimable from singleton clusters") {
    const auto ds = singleton_dataset({1.0, 2.0});
    std::vector<Eigen::VectorXd> res{Eigen::VectorXd::Constant(1, 0.5),
                                     Eigen::VectorXd::Constant(1, -0.5)};
    CHECK_THROWS_AS(estimate_alpha(res, ds, 0, 1.0, CorrelationKind::exchangeable),
                    AnalysisError);
}

TEST_CASE("independence GEE equals the IRLS fit") {
    Rng rng(5150);
    const auto ds = testsupport::random_dataset(rng);
    const auto fit = gee_fit(ds, spec_with(CorrelationKind::independence));
    const Eigen::VectorXd glm = irls_glm(ds);
    CHECK(fit.converged);
    CHECK((fit.beta - glm).cwiseAbs().maxCoeff() < 1e-8);
    CHECK_FALSE(fit.alpha.has_value());
}

TEST_CASE("singleton clusters make exchangeable identical to independence") {
    const auto ds = singleton_dataset({1.0, 5.0, 2.0, 7.0});
    const auto exch = gee_fit(ds, spec_with(CorrelationKind::exchangeable));
    const auto indep = gee_fit(ds, spec_with(CorrelationKind::independence));
    CHECK(exch.converged);
    CHECK_FALSE(exch.alpha.has_value());
    CHECK((exch.beta - indep.beta).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("GLM oracle equivalence on 20 random datasets") {
    Rng rng(314159);
    for (int trial = 0; trial < 20; ++trial) {
        const auto ds = testsupport::random_dataset(rng);
        const auto fit = gee_fit(ds, spec_with(CorrelationKind::independence));
        const Eigen::VectorXd oracle = testsupport::newton_poisson_oracle(ds);
        REQUIRE(fit.converged);
        CHECK((fit.beta - oracle).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("score vanishes at convergence") {
    SimConfig cfg;
    cfg.n_clusters = 50;
    cfg.n_periods = 6;
    cfg.beta_intercept = std::log(50.0);
    cfg.beta_covariates = {0.3};
    cfg.sigma_b = 0.4;
    cfg.seed = 77;
    const PanelTable table = simulate_panel(cfg);
    const ModelSpec spec = sim_model_spec(cfg, CorrelationKind::exchangeable);
    const PanelDataset ds = build_panel(table, spec);
    const FitResult fit = gee_fit(ds, spec);
    REQUIRE(fit.converged);
    const WorkingCorrelation corr{CorrelationKind::exchangeable, *fit.alpha};
    CHECK(score_norm(ds, fit.beta, corr) <
          1e-6 * (1.0 + fit.beta.cwiseAbs().maxCoeff()));

    SUBCASE("exchangeable score with alpha forced to zero matches independence") {
        const auto indep = gee_fit(ds, spec_with(CorrelationKind::independence));
        const WorkingCorrelation zero{CorrelationKind::exchangeable, 0.0};
        CHECK(score_norm(ds, indep.beta, zero) ==
              doctest::Approx(score_norm(ds, indep.beta,
                                         {CorrelationKind::independence, 0.0}))
                  .epsilon(1e-12));
    }
}

TEST_CASE("cluster order does not change the estimate") {
    Rng rng(8080);
    auto ds = testsupport::random_dataset(rng);
    const auto fit1 = gee_fit(ds, spec_with(CorrelationKind::exchangeable));
    std::reverse(ds.clusters.begin(), ds.clusters.end());
    const auto fit2 = gee_fit(ds, spec_with(CorrelationKind::exchangeable));
    CHECK((fit1.beta - fit2.beta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("scaling populations shifts only the intercept in count-offset mode") {
    PanelTable table;
    table.covariate_names = {"SIM_COV_1"};
    Rng rng(4242);
    for (int c = 0; c < 30; ++c) {
        char fips[8];
        std::snprintf(fips, sizeof(fips), "%05d", c + 1);
        for (int t = 0; t < 5; ++t) {
            PanelRow row;
            row.fips = fips;
            row.year = 2000 + t;
            row.population = 100000;
            row.urban_code = kUrbanLevels[rng.uniform_int(4)];
            const double x = rng.normal();
            row.covariates["SIM_COV_1"] = x;
            // counts with exposure population/1e5 = 1
            const double count = static_cast<double>(rng.poisson(std::exp(4.0 + 0.3 * x)));
            row.jail_rate = count;  // rate = count since exposure is 1
            table.rows.push_back(row);
        }
    }
    ModelSpec spec;
    spec.name = "counts";
    spec.mode = ResponseMode::count_offset;
    spec.covariates = {"SIM_COV_1"};
    spec.corr = {CorrelationKind::independence, 0.0};
    const auto fit1 = gee_fit(build_panel(table, spec), spec);

    // Same counts, populations x10: rate drops by 10, offset rises by log 10.
    for (auto& row : table.rows) {
        row.population = *row.population * 10;
        row.jail_rate /= 10.0;
    }
    const auto fit2 = gee_fit(build_panel(table, spec), spec);
    CHECK(fit2.beta(0) == doctest::Approx(fit1.beta(0) - std::log(10.0)).epsilon(1e-8));
    for (int k = 1; k < fit1.beta.size(); ++k) {
        CHECK(fit2.beta(k) == doctest::Approx(fit1.beta(k)).epsilon(1e-8));
    }
}

TEST_CASE("degenerate dispersion aborts a correlated fit with a diagnostic") {
    Eigen::VectorXd y(3);
    y << 4.0, 4.0, 4.0;
    const auto ds = clustered_dataset({y}, {Eigen::MatrixXd::Ones(3, 1)});
    CHECK_THROWS_WITH_AS(gee_fit(ds, spec_with(CorrelationKind::exchangeable)),
                         doctest::Contains("degenerate"), AnalysisError);
    // Independence proceeds: phi cancels from the score.
    const auto fit = gee_fit(ds, spec_with(CorrelationKind::independence));
    CHECK(fit.converged);
    CHECK(fit.phi_degenerate);
    CHECK(fit.beta(0) == doctest::Approx(std::log(4.0)));
}
