#include "panelgee/engine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "panelgee/errors.hpp"

namespace panelgee {

namespace {

Eigen::MatrixXd stack_design(const PanelDataset& data) {
    Eigen::MatrixXd X(data.n_obs(), data.n_params());
    int row = 0;
    for (const auto& cl : data.clusters) {
        X.block(row, 0, cl.size(), X.cols()) = cl.X;
        row += cl.size();
    }
    return X;
}

}  // namespace

void check_design_rank(const PanelDataset& data) {
    if (data.clusters.empty()) throw AnalysisError("empty dataset: no clusters to fit");
    const int p = data.n_params();
    const int n = data.n_obs();
    if (n < p) throw AnalysisError("fewer observations than parameters");
    const Eigen::MatrixXd X = stack_design(data);

    std::vector<std::string> bad;
    for (int c = 1; c < p; ++c) {  // skip intercept
        const double span = X.col(c).maxCoeff() - X.col(c).minCoeff();
        if (span == 0.0) bad.push_back(data.schema[c] + " (zero variance)");
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) {
        const auto perm = qr.colsPermutation().indices();
        for (int k = qr.rank(); k < p; ++k) {
            const std::string& name = data.schema[perm(k)];
            if (std::find(bad.begin(), bad.end(), name + " (zero variance)") == bad.end()) {
                bad.push_back(name);
            }
        }
    }
    if (!bad.empty()) {
        std::ostringstream os;
        os << "design matrix is rank deficient; offending columns:";
        for (const auto& b : bad) os << ' ' << b;
        throw AnalysisError(os.str());
    }
}

std::vector<Eigen::VectorXd> fitted_means(const PanelDataset& data,
                                          const Eigen::VectorXd& beta) {
    std::vector<Eigen::VectorXd> mus;
    mus.reserve(data.clusters.size());
    for (const auto& cl : data.clusters) {
        mus.push_back((cl.X * beta + cl.offset).array().exp());
    }
    return mus;
}

Eigen::VectorXd irls_glm(const PanelDataset& data, double tol, int max_iter) {
    check_design_rank(data);
    const int p = data.n_params();

    double sum_y = 0.0, sum_exposure = 0.0;
    for (const auto& cl : data.clusters) {
        sum_y += cl.y.sum();
        sum_exposure += cl.offset.array().exp().sum();
    }
    if (sum_y <= 0.0) throw AnalysisError("response sums to zero; log link undefined");

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    beta(0) = std::log(sum_y / sum_exposure);

    for (int iter = 1; iter <= max_iter; ++iter) {
        Eigen::MatrixXd XtWX = Eigen::MatrixXd::Zero(p, p);
        Eigen::VectorXd XtWz = Eigen::VectorXd::Zero(p);
        for (const auto& cl : data.clusters) {
            const Eigen::VectorXd eta = cl.X * beta + cl.offset;
            const Eigen::VectorXd mu = eta.array().exp();
            const Eigen::VectorXd z =
                (eta - cl.offset).array() + (cl.y - mu).array() / mu.array();
            XtWX.noalias() += cl.X.transpose() * mu.asDiagonal() * cl.X;
            XtWz.noalias() += cl.X.transpose() * (mu.array() * z.array()).matrix();
        }
        const Eigen::VectorXd beta_new = XtWX.ldlt().solve(XtWz);
        const double delta = (beta_new - beta).cwiseAbs().maxCoeff();
        beta = beta_new;
        if (delta < tol) return beta;
    }
    throw AnalysisError("IRLS failed to converge in " + std::to_string(max_iter) +
                        " iterations");
}

std::vector<Eigen::VectorXd> pearson_residuals(const PanelDataset& data,
                                               const Eigen::VectorXd& beta) {
    std::vector<Eigen::VectorXd> res;
    res.reserve(data.clusters.size());
    for (const auto& cl : data.clusters) {
        const Eigen::VectorXd mu = (cl.X * beta + cl.offset).array().exp();
        res.push_back((cl.y - mu).array() / mu.array().sqrt());
    }
    return res;
}

double estimate_phi(const std::vector<Eigen::VectorXd>& residuals, int n_obs, int p) {
    if (n_obs <= p) throw AnalysisError("cannot estimate dispersion: N <= p");
    double ss = 0.0;
    for (const auto& e : residuals) ss += e.squaredNorm();
    return ss / (n_obs - p);
}

AlphaEstimate estimate_alpha(const std::vector<Eigen::VectorXd>& residuals,
                             const PanelDataset& data, int p, double phi,
                             CorrelationKind kind) {
    if (phi <= 0.0) throw AnalysisError("cannot estimate alpha: phi <= 0");
    double num = 0.0;
    double n_pairs = 0.0;
    bool any_pair = false;
    for (std::size_t i = 0; i < residuals.size(); ++i) {
        const Eigen::VectorXd& e = residuals[i];
        const int n = static_cast<int>(e.size());
        if (n < 2) continue;
        any_pair = true;
        if (kind == CorrelationKind::exchangeable) {
            const double s = e.sum();
            num += 0.5 * (s * s - e.squaredNorm());
            n_pairs += 0.5 * n * (n - 1);
        } else if (kind == CorrelationKind::ar1) {
            const Eigen::VectorXi& yrs = data.clusters[i].years;
            for (int j = 0; j + 1 < n; ++j) {
                if (yrs(j + 1) - yrs(j) == 1) {
                    num += e(j) * e(j + 1);
                    n_pairs += 1.0;
                }
            }
        }
    }
    if (!any_pair) throw AnalysisError("no cluster of size >= 2; alpha not estimable");
    const double den = phi * (n_pairs - p);
    if (den <= 0.0) throw AnalysisError("alpha moment denominator <= 0");

    AlphaEstimate est;
    est.alpha = num / den;
    const auto [lo, hi] = alpha_bounds(kind, data.max_cluster_size());
    const double clo = lo + 1e-6, chi = hi - 1e-6;
    if (est.alpha < clo) {
        est.alpha = clo;
        est.clamped = true;
    } else if (est.alpha > chi) {
        est.alpha = chi;
        est.clamped = true;
    }
    return est;
}

namespace {

struct ScoreParts {
    Eigen::MatrixXd B;  // sum E' Rinv E / phi
    Eigen::VectorXd U;  // sum E' Rinv s / phi
};

ScoreParts score_parts(const PanelDataset& data, const Eigen::VectorXd& beta,
                       const WorkingCorrelation& corr, double phi) {
    const int p = data.n_params();
    ScoreParts out{Eigen::MatrixXd::Zero(p, p), Eigen::VectorXd::Zero(p)};
    for (const auto& cl : data.clusters) {
        const Eigen::VectorXd mu = (cl.X * beta + cl.offset).array().exp();
        const Eigen::VectorXd sqmu = mu.array().sqrt();
        const Eigen::MatrixXd E = sqmu.asDiagonal() * cl.X;  // A^-1/2 D
        const Eigen::VectorXd s = (cl.y - mu).array() / sqmu.array();
        if (corr.kind == CorrelationKind::independence || cl.size() == 1) {
            out.B.noalias() += E.transpose() * E;
            out.U.noalias() += E.transpose() * s;
        } else {
            const Eigen::MatrixXd Rinv = inverse_correlation(corr, cl.years);
            const Eigen::MatrixXd ERinv = E.transpose() * Rinv;
            out.B.noalias() += ERinv * E;
            out.U.noalias() += ERinv * s;
        }
    }
    out.B /= phi;
    out.U /= phi;
    return out;
}

}  // namespace

double score_norm(const PanelDataset& data, const Eigen::VectorXd& beta,
                  const WorkingCorrelation& corr) {
    return score_parts(data, beta, corr, 1.0).U.cwiseAbs().maxCoeff();
}

FitResult gee_fit(const PanelDataset& data, const ModelSpec& spec) {
    check_design_rank(data);
    const int p = data.n_params();
    const int N = data.n_obs();

    FitResult fit;
    fit.n_obs = N;
    fit.n_clusters = data.n_clusters();
    fit.p = p;

    WorkingCorrelation corr = spec.corr;
    const bool all_singletons = data.max_cluster_size() < 2;
    bool estimate_corr = corr.kind != CorrelationKind::independence;
    if (estimate_corr && all_singletons) {
        // 1x1 working correlation: identical to independence, alpha undefined.
        corr.kind = CorrelationKind::independence;
        estimate_corr = false;
        fit.notes.push_back("all clusters are singletons; alpha not estimable");
    }

    Eigen::VectorXd beta = irls_glm(data, spec.tol, spec.max_iter);
    double phi = 1.0;

    auto update_nuisance = [&]() {
        const auto residuals = pearson_residuals(data, beta);
        phi = estimate_phi(residuals, N, p);
        if (phi <= 0.0) {
            fit.phi_degenerate = true;
            if (estimate_corr) {
                throw AnalysisError("degenerate fit: all Pearson residuals are zero, "
                                    "dispersion and alpha are not estimable");
            }
            phi = 1.0;  // cancels from the independence score
            return;
        }
        if (estimate_corr) {
            const auto est = estimate_alpha(residuals, data, p, phi, corr.kind);
            corr.alpha = est.alpha;
            fit.alpha_clamped = fit.alpha_clamped || est.clamped;
        }
    };

    bool converged = false;
    int iter = 0;
    for (iter = 1; iter <= spec.max_iter; ++iter) {
        update_nuisance();
        ScoreParts parts = score_parts(data, beta, corr, phi);
        Eigen::LDLT<Eigen::MatrixXd> ldlt(parts.B);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
            throw AnalysisError("information matrix is not positive definite");
        }
        Eigen::VectorXd delta = ldlt.solve(parts.U);

        // Step halving on the score norm; counts as one iteration.
        const double norm0 = parts.U.cwiseAbs().maxCoeff();
        for (int h = 0; h < 10; ++h) {
            const ScoreParts trial = score_parts(data, beta + delta, corr, phi);
            if (trial.U.cwiseAbs().maxCoeff() <= norm0) break;
            delta *= 0.5;
        }
        beta += delta;
        if (delta.cwiseAbs().maxCoeff() < spec.tol) {
            converged = true;
            break;
        }
    }
    fit.n_iter = std::min(iter, spec.max_iter);
    fit.converged = converged;

    // Final nuisance estimates and covariances at the last iterate.
    update_nuisance();
    fit.beta = beta;
    fit.phi = phi;
    if (estimate_corr) fit.alpha = corr.alpha;

    const ScoreParts parts = score_parts(data, beta, corr, phi);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(parts.B);
    fit.model_cov = ldlt.solve(Eigen::MatrixXd::Identity(p, p));

    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(p, p);
    for (const auto& cl : data.clusters) {
        const Eigen::VectorXd mu = (cl.X * beta + cl.offset).array().exp();
        const Eigen::VectorXd sqmu = mu.array().sqrt();
        const Eigen::MatrixXd E = sqmu.asDiagonal() * cl.X;
        const Eigen::VectorXd s = (cl.y - mu).array() / sqmu.array();
        Eigen::VectorXd g;  // D' V^-1 (y - mu) for this cluster
        if (corr.kind == CorrelationKind::independence || cl.size() == 1) {
            g = E.transpose() * s / phi;
        } else {
            g = E.transpose() * (inverse_correlation(corr, cl.years) * s) / phi;
        }
        M.noalias() += g * g.transpose();
    }
    fit.robust_cov = fit.model_cov * M * fit.model_cov;
    fit.robust_cov = 0.5 * (fit.robust_cov + fit.robust_cov.transpose()).eval();

    double ql = 0.0;
    for (const auto& cl : data.clusters) {
        const Eigen::VectorXd mu = (cl.X * beta + cl.offset).array().exp();
        for (int j = 0; j < cl.size(); ++j) {
            ql += (cl.y(j) > 0.0 ? cl.y(j) * std::log(mu(j)) : 0.0) - mu(j);
        }
    }
    fit.quasi_loglik = ql;
    return fit;
}

}  // namespace panelgee
