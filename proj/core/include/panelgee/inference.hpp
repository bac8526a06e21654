#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "panelgee/engine.hpp"
#include "panelgee/panel.hpp"

namespace panelgee {

// Sandwich covariance B^-1 M B^-1 with B = sum D'V^-1 D and
// M = sum D'V^-1 (y-mu)(y-mu)' V^-1 D, evaluated at beta.
Eigen::MatrixXd sandwich_covariance(const PanelDataset& data, const Eigen::VectorXd& beta,
                                    const WorkingCorrelation& corr, double phi);

// Wald chi-square with 1 df: W = (estimate/se)^2, p = Pr(chi2_1 > W).
std::pair<double, double> wald_test(double estimate, double std_err);

struct RateRatio {
    double rr;
    double lo;
    double hi;
};

RateRatio rate_ratio(double estimate, double std_err, double level = 0.95);

// (rr - 1) * 100: percent change relative to the referent.
double percent_change(double rr);

// Percent change for a `delta`-unit increase in the covariate.
double percent_change_per_delta(double estimate, double delta = 10.0);

// Poisson quasi-likelihood sum(y log mu - mu); a zero response contributes -mu.
double quasi_likelihood(const PanelDataset& data, const std::vector<Eigen::VectorXd>& mu);

// Independence model-based information sum D'A^-1 D at beta (no dispersion
// scaling); the Omega term of QIC.
Eigen::MatrixXd independence_information(const PanelDataset& data,
                                         const Eigen::VectorXd& beta);

// QIC = -2 QL + 2 trace(Omega_I * V_robust). Exposed with an injectable
// covariance so the trace identity is testable.
double qic_from_parts(double quasi_loglik, const Eigen::MatrixXd& omega_independence,
                      const Eigen::MatrixXd& robust_cov);
double qic(const FitResult& fit, const PanelDataset& data);

struct CoefficientRow {
    std::string term;
    double estimate;
    double std_err;
    double rate_ratio;
    double ci_low;
    double ci_high;
    double p_value;
};

struct CoefficientTable {
    std::string model;
    std::vector<CoefficientRow> rows;
    std::vector<std::string> referents;  // rendered with a trailing "*"
    int n_obs = 0;
    int n_clusters = 0;
    double qic = 0.0;
    double phi = 0.0;
    std::optional<double> alpha;
    int n_iter = 0;
    bool converged = true;

    std::string to_text() const;
    std::string to_json() const;
};

CoefficientTable coefficient_table(const FitResult& fit, const PanelDataset& data,
                                   const std::string& model_name);

struct NestedComparison {
    std::vector<CoefficientTable> models;
    std::uint64_t dataset_fingerprint = 0;

    std::string to_text() const;
    std::string to_json() const;
};

// Fits every ladder model on the one dataset that is complete for the union
// of all ladder covariates, so N and the cluster count are constant down the
// ladder.
NestedComparison nested_run(const PanelTable& table, const std::vector<ModelSpec>& ladder,
                            const StudyWindow& window = {});

// p-value rendered with 4 decimals, so extreme values print as "0.0000".
std::string format_p_value(double p);

}  // namespace panelgee
