#include "panelgee/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "panelgee/correlation.hpp"
#include "panelgee/errors.hpp"

namespace panelgee {

using nlohmann::json;

namespace {

// z such that Phi(z) = q, via Acklam's rational approximation refined with one
// Halley step against erfc. Good to ~1e-13; the fixed 95% multiplier below is
// used verbatim so CI arithmetic matches the published tables.
double normal_quantile(double q) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    double x;
    if (q < 0.02425) {
        const double u = std::sqrt(-2.0 * std::log(q));
        x = (((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
            ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
    } else if (q <= 0.97575) {
        const double u = q - 0.5, r = u * u;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * u /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double u = std::sqrt(-2.0 * std::log(1.0 - q));
        x = -(((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
            ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
    }
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - q;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

constexpr double kZ95 = 1.959964;

std::string fmt(double v, int decimals) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

}  // namespace

std::string format_p_value(double p) { return fmt(p, 4); }

Eigen::MatrixXd sandwich_covariance(const PanelDataset& data, const Eigen::VectorXd& beta,
                                    const WorkingCorrelation& corr, double phi) {
    if (phi <= 0.0) phi = 1.0;  // phi cancels B^-1 M B^-1 when applied consistently
    const int p = data.n_params();
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(p, p);
    for (const auto& cl : data.clusters) {
        const Eigen::VectorXd mu = (cl.X * beta + cl.offset).array().exp();
        const Eigen::VectorXd sqmu = mu.array().sqrt();
        const Eigen::MatrixXd E = sqmu.asDiagonal() * cl.X;
        const Eigen::VectorXd s = (cl.y - mu).array() / sqmu.array();
        Eigen::VectorXd g;
        if (corr.kind == CorrelationKind::independence || cl.size() == 1) {
            B.noalias() += E.transpose() * E / phi;
            g = E.transpose() * s / phi;
        } else {
            const Eigen::MatrixXd Rinv = inverse_correlation(corr, cl.years);
            const Eigen::MatrixXd ERinv = E.transpose() * Rinv;
            B.noalias() += ERinv * E / phi;
            g = ERinv * s / phi;
        }
        M.noalias() += g * g.transpose();
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(B);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
        throw AnalysisError("bread matrix B is not invertible");
    }
    const Eigen::MatrixXd Binv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    Eigen::MatrixXd V = Binv * M * Binv;
    return 0.5 * (V + V.transpose());
}

std::pair<double, double> wald_test(double estimate, double std_err) {
    if (std_err <= 0.0) throw AnalysisError("Wald test requires a positive standard error");
    const double t = estimate / std_err;
    const double w = t * t;
    const double p = std::erfc(std::abs(t) / std::sqrt(2.0));
    return {w, p};
}

RateRatio rate_ratio(double estimate, double std_err, double level) {
    if (std_err <= 0.0) throw AnalysisError("rate ratio CI requires a positive standard error");
    if (level <= 0.0 || level >= 1.0) throw AnalysisError("confidence level must be in (0,1)");
    const double z = (std::abs(level - 0.95) < 1e-12) ? kZ95
                                                      : normal_quantile(0.5 + level / 2.0);
    return {std::exp(estimate), std::exp(estimate - z * std_err),
            std::exp(estimate + z * std_err)};
}

double percent_change(double rr) {
    if (rr <= 0.0) throw AnalysisError("rate ratio must be positive");
    return (rr - 1.0) * 100.0;
}

double percent_change_per_delta(double estimate, double delta) {
    return (std::exp(delta * estimate) - 1.0) * 100.0;
}

double quasi_likelihood(const PanelDataset& data, const std::vector<Eigen::VectorXd>& mu) {
    double ql = 0.0;
    for (std::size_t i = 0; i < data.clusters.size(); ++i) {
        const auto& y = data.clusters[i].y;
        for (int j = 0; j < y.size(); ++j) {
            ql += (y(j) > 0.0 ? y(j) * std::log(mu[i](j)) : 0.0) - mu[i](j);
        }
    }
    return ql;
}

Eigen::MatrixXd independence_information(const PanelDataset& data,
                                         const Eigen::VectorXd& beta) {
    const int p = data.n_params();
    Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(p, p);
    for (const auto& cl : data.clusters) {
        const Eigen::VectorXd mu = (cl.X * beta + cl.offset).array().exp();
        omega.noalias() += cl.X.transpose() * mu.asDiagonal() * cl.X;
    }
    return omega;
}

double qic_from_parts(double quasi_loglik, const Eigen::MatrixXd& omega_independence,
                      const Eigen::MatrixXd& robust_cov) {
    return -2.0 * quasi_loglik + 2.0 * (omega_independence * robust_cov).trace();
}

double qic(const FitResult& fit, const PanelDataset& data) {
    if (!fit.converged) throw AnalysisError("QIC requires a converged fit");
    const Eigen::MatrixXd omega = independence_information(data, fit.beta);
    return qic_from_parts(fit.quasi_loglik, omega, fit.robust_cov);
}

CoefficientTable coefficient_table(const FitResult& fit, const PanelDataset& data,
                                   const std::string& model_name) {
    CoefficientTable table;
    table.model = model_name;
    table.n_obs = fit.n_obs;
    table.n_clusters = fit.n_clusters;
    table.phi = fit.phi;
    table.alpha = fit.alpha;
    table.n_iter = fit.n_iter;
    table.converged = fit.converged;
    for (const auto& [group, label] : data.referents) table.referents.push_back(label);
    for (int i = 0; i < fit.p; ++i) {
        const double est = fit.beta(i);
        const double se = std::sqrt(fit.robust_cov(i, i));
        const auto rr = rate_ratio(est, se);
        const auto [w, p] = wald_test(est, se);
        (void)w;
        table.rows.push_back({data.schema[i], est, se, rr.rr, rr.lo, rr.hi, p});
    }
    table.qic = fit.converged ? qic(fit, data) : std::nan("");
    return table;
}

std::string CoefficientTable::to_text() const {
    std::ostringstream os;
    os << "Model: " << model;
    if (!converged) os << "  [NOT CONVERGED after " << n_iter << " iterations]";
    os << '\n';
    const int w_term = 42;
    os << std::left << std::setw(w_term) << "Term" << std::right << std::setw(10) << "Estimate"
       << std::setw(10) << "Std.err" << "  " << std::left << std::setw(22)
       << "Rate Ratio (95% CI)" << std::right << std::setw(8) << "Pr(>W)" << '\n';
    for (const auto& ref : referents) {
        os << std::left << std::setw(w_term) << (ref + "*") << '\n';
    }
    for (const auto& r : rows) {
        os << std::left << std::setw(w_term) << r.term << std::right << std::setw(10)
           << fmt(r.estimate, 2) << std::setw(10) << fmt(r.std_err, 2) << "  ";
        std::string rr_cell;
        if (r.term != "(Intercept)") {
            rr_cell = fmt(r.rate_ratio, 2) + " (" + fmt(r.ci_low, 2) + ", " +
                      fmt(r.ci_high, 2) + ")";
        }
        os << std::left << std::setw(22) << rr_cell << std::right << std::setw(8)
           << format_p_value(r.p_value) << '\n';
    }
    os << "N " << n_obs << "\nClusters " << n_clusters << "\nModel fit: QIC " << fmt(qic, 0)
       << '\n';
    return os.str();
}

std::string CoefficientTable::to_json() const {
    json j;
    j["model"] = model;
    j["converged"] = converged;
    j["n_iter"] = n_iter;
    j["n_obs"] = n_obs;
    j["n_clusters"] = n_clusters;
    j["qic"] = qic;
    j["phi"] = phi;
    if (alpha) j["alpha"] = *alpha;
    j["referents"] = referents;
    j["terms"] = json::array();
    for (const auto& r : rows) {
        j["terms"].push_back({{"term", r.term},
                              {"estimate", r.estimate},
                              {"std_err", r.std_err},
                              {"rate_ratio", r.rate_ratio},
                              {"ci_low", r.ci_low},
                              {"ci_high", r.ci_high},
                              {"p_value", r.p_value},
                              {"p_rendered", format_p_value(r.p_value)}});
    }
    return j.dump(2);
}

std::string NestedComparison::to_text() const {
    std::ostringstream os;
    os << "Nested models (shared sample";
    if (!models.empty()) {
        os << ": N " << models.front().n_obs << ", clusters " << models.front().n_clusters;
    }
    os << ")\n\n";
    for (const auto& m : models) {
        os << m.to_text() << '\n';
    }
    return os.str();
}

std::string NestedComparison::to_json() const {
    json j;
    j["dataset_fingerprint"] = dataset_fingerprint;
    j["models"] = json::array();
    for (const auto& m : models) j["models"].push_back(json::parse(m.to_json()));
    return j.dump(2);
}

NestedComparison nested_run(const PanelTable& table, const std::vector<ModelSpec>& ladder,
                            const StudyWindow& window) {
    if (ladder.empty()) throw EnvironmentError("model ladder is empty");
    std::vector<std::string> required;
    for (const auto& spec : ladder) {
        for (const auto& c : spec.covariates) {
            if (std::find(required.begin(), required.end(), c) == required.end()) {
                required.push_back(c);
            }
        }
    }
    auto [filtered, drop] = complete_case_filter(table, required);
    (void)drop;
    if (filtered.rows.empty()) throw AnalysisError("no complete-case rows left to fit");

    NestedComparison cmp;
    for (const auto& spec : ladder) {
        try {
            PanelDataset ds = build_panel(filtered, spec, window);
            if (cmp.dataset_fingerprint == 0) cmp.dataset_fingerprint = ds.fingerprint();
            const FitResult fit = gee_fit(ds, spec);
            cmp.models.push_back(coefficient_table(fit, ds, spec.name));
        } catch (const AnalysisError& e) {
            throw AnalysisError("model '" + spec.name + "': " + e.what());
        }
    }
    return cmp;
}

}  // namespace panelgee
