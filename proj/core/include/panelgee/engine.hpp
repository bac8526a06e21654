#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "panelgee/panel.hpp"

namespace panelgee {

struct FitResult {
    Eigen::VectorXd beta;
    std::optional<double> alpha;  // absent for independence or all-singleton clusters
    double phi = 1.0;
    Eigen::MatrixXd model_cov;   // B^-1, B = sum D' V^-1 D
    Eigen::MatrixXd robust_cov;  // sandwich B^-1 M B^-1
    int n_iter = 0;
    bool converged = false;
    int n_obs = 0;
    int n_clusters = 0;
    int p = 0;
    double quasi_loglik = 0.0;
    bool alpha_clamped = false;
    bool phi_degenerate = false;
    std::vector<std::string> notes;
};

// Checks the design for full column rank via pivoted QR; throws AnalysisError
// naming the offending columns (including zero-variance ones) on failure.
void check_design_rank(const PanelDataset& data);

// Quasi-Poisson IRLS under working independence; also the GEE initializer.
// Started at beta = (log of the exposure-weighted mean, 0, ..., 0) so the
// first means are positive.
Eigen::VectorXd irls_glm(const PanelDataset& data, double tol = 1e-8, int max_iter = 100);

// Fitted means per cluster: mu_ij = exp(x_ij' beta + offset_ij).
std::vector<Eigen::VectorXd> fitted_means(const PanelDataset& data,
                                          const Eigen::VectorXd& beta);

// Pearson residuals (y - mu)/sqrt(mu) per cluster.
std::vector<Eigen::VectorXd> pearson_residuals(const PanelDataset& data,
                                               const Eigen::VectorXd& beta);

// Moment dispersion estimate sum(e^2)/(N - p).
double estimate_phi(const std::vector<Eigen::VectorXd>& residuals, int n_obs, int p);

struct AlphaEstimate {
    double alpha = 0.0;
    bool clamped = false;
};

// Moment estimate of the working correlation parameter; exchangeable uses all
// within-cluster pairs, AR(1) only adjacent-year pairs. The result is clamped
// into the validity interval with a flag.
AlphaEstimate estimate_alpha(const std::vector<Eigen::VectorXd>& residuals,
                             const PanelDataset& data, int p, double phi,
                             CorrelationKind kind);

// Solves the GEE score equation sum_i D_i' V_i^-1 (Y_i - mu_i) = 0 by Fisher
// scoring with alternating (phi, alpha) moment updates. Non-convergence is
// reported through the converged flag, not thrown.
FitResult gee_fit(const PanelDataset& data, const ModelSpec& spec);

// Infinity norm of the score at beta, for convergence diagnostics and tests.
double score_norm(const PanelDataset& data, const Eigen::VectorXd& beta,
                  const WorkingCorrelation& corr);

}  // namespace panelgee
