#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "panelgee/panel.hpp"

namespace panelgee {

// Random-intercept Poisson panel generator. Cluster i draws b_i ~ N(0, sd^2);
// each observation gets mu = exp(intercept + urban + year + x'beta + b) and
// y ~ Poisson(mu). The shared intercept induces exchangeable within-cluster
// dependence with a marginal correlation the Monte-Carlo oracle below can
// measure, which is what makes alpha recovery testable.
struct SimConfig {
    int n_clusters = 100;
    int n_periods = 8;
    double beta_intercept = 5.0;
    std::vector<double> beta_urban;       // suburban, urban, small/mid (0 = rural only)
    std::vector<double> beta_year;        // effects for periods 2..n (referent first year)
    std::vector<double> beta_covariates;  // slopes for SIM_COV_1..k, x ~ N(0,1)
    double sigma_b = 0.0;
    int start_year = 2000;
    std::uint64_t seed = 1;

    bool valid() const;
};

// Deterministic under a fixed seed; the output conforms to the ingest CSV
// schema (covariates named SIM_COV_k) and passes validation untouched.
PanelTable simulate_panel(const SimConfig& cfg);

// Names of the continuous covariate columns the generator emits.
std::vector<std::string> sim_covariate_names(const SimConfig& cfg);

// ModelSpec matching the generator: urbanicity (always), year effects when
// the config has any, and the SIM_COV columns.
ModelSpec sim_model_spec(const SimConfig& cfg, CorrelationKind corr);

// True marginal coefficient vector in design-column order. The marginal
// intercept is beta_intercept + sigma_b^2/2: the frailty term only shifts
// the intercept of the population-averaged model.
Eigen::VectorXd sim_true_marginal_beta(const SimConfig& cfg);

// Monte-Carlo estimate of the correlation between the Pearson-standardized
// responses of two same-cluster observations; the ground truth that the
// exchangeable alpha estimate should recover.
double implied_exchangeable_corr(const SimConfig& cfg, int mc_samples,
                                 std::uint64_t seed = 987654321);

struct BootstrapResult {
    Eigen::VectorXd se;
    int n_replicates = 0;
    int n_failed = 0;
};

// Cluster bootstrap: resample whole counties with replacement (copies keep
// distinct cluster identities), refit, report per-coefficient standard
// deviations. Replicate r draws from Rng(seed ^ r).
BootstrapResult cluster_bootstrap(const PanelTable& table, const ModelSpec& spec, int B,
                                  std::uint64_t seed, const StudyWindow& window = {});

}  // namespace panelgee
