#include "panelgee/simulate.hpp"

#include <cmath>
#include <cstdio>

#include "panelgee/engine.hpp"
#include "panelgee/errors.hpp"
#include "panelgee/rng.hpp"

namespace panelgee {

bool SimConfig::valid() const {
    return n_clusters >= 1 && n_periods >= 1 && sigma_b >= 0.0 &&
           (beta_urban.empty() || beta_urban.size() == 3) &&
           (beta_year.empty() ||
            beta_year.size() == static_cast<std::size_t>(n_periods - 1));
}

std::vector<std::string> sim_covariate_names(const SimConfig& cfg) {
    std::vector<std::string> names;
    for (std::size_t k = 0; k < cfg.beta_covariates.size(); ++k) {
        names.push_back("SIM_COV_" + std::to_string(k + 1));
    }
    return names;
}

ModelSpec sim_model_spec(const SimConfig& cfg, CorrelationKind corr) {
    ModelSpec spec;
    spec.name = "simulated";
    spec.include_year = !cfg.beta_year.empty();
    spec.covariates = sim_covariate_names(cfg);
    spec.corr = {corr, 0.0};
    return spec;
}

Eigen::VectorXd sim_true_marginal_beta(const SimConfig& cfg) {
    const int n_year = cfg.beta_year.empty() ? 0 : cfg.n_periods - 1;
    Eigen::VectorXd beta(1 + 3 + n_year + static_cast<int>(cfg.beta_covariates.size()));
    int k = 0;
    beta(k++) = cfg.beta_intercept + 0.5 * cfg.sigma_b * cfg.sigma_b;
    for (int u = 0; u < 3; ++u) {
        beta(k++) = cfg.beta_urban.empty() ? 0.0 : cfg.beta_urban[u];
    }
    for (int t = 0; t < n_year; ++t) beta(k++) = cfg.beta_year[t];
    for (double b : cfg.beta_covariates) beta(k++) = b;
    return beta;
}

namespace {

// Urbanicity effect by level; beta_urban is ordered as the design indicators
// (suburban, urban, small/mid) and rural is the referent.
double urban_effect(const SimConfig& cfg, int level_index) {
    if (cfg.beta_urban.empty() || level_index == 0) return 0.0;
    return cfg.beta_urban[level_index - 1];
}

const std::vector<std::string> kSimUrbanDraw = {
    "rural", "large_metro_suburban", "large_metro_urban", "small_mid_metro"};

}  // namespace

PanelTable simulate_panel(const SimConfig& cfg) {
    if (!cfg.valid()) throw EnvironmentError("invalid simulation config");
    Rng rng(cfg.seed);
    PanelTable table;
    table.covariate_names = sim_covariate_names(cfg);
    const std::size_t n_cov = cfg.beta_covariates.size();

    for (int i = 0; i < cfg.n_clusters; ++i) {
        char fips[16];
        std::snprintf(fips, sizeof(fips), "%05d", i + 1);
        const int urban = static_cast<int>(rng.uniform_int(4));
        const double b = cfg.sigma_b > 0.0 ? rng.normal(0.0, cfg.sigma_b) : 0.0;
        for (int t = 0; t < cfg.n_periods; ++t) {
            PanelRow row;
            row.fips = fips;
            row.year = cfg.start_year + t;
            row.population = 100000;
            row.urban_code = kSimUrbanDraw[urban];
            double eta = cfg.beta_intercept + urban_effect(cfg, urban) + b;
            if (!cfg.beta_year.empty() && t > 0) eta += cfg.beta_year[t - 1];
            for (std::size_t k = 0; k < n_cov; ++k) {
                const double x = rng.normal();
                row.covariates[table.covariate_names[k]] = x;
                eta += cfg.beta_covariates[k] * x;
            }
            row.jail_rate = static_cast<double>(rng.poisson(std::exp(eta)));
            table.rows.push_back(std::move(row));
        }
    }
    return table;
}

double implied_exchangeable_corr(const SimConfig& cfg, int mc_samples, std::uint64_t seed) {
    if (mc_samples < 100000) throw EnvironmentError("oracle needs mc_samples >= 1e5");
    Rng rng(seed);
    const std::size_t n_cov = cfg.beta_covariates.size();
    const double marginal_shift = 0.5 * cfg.sigma_b * cfg.sigma_b;

    double s1 = 0.0, s2 = 0.0, s11 = 0.0, s22 = 0.0, s12 = 0.0;
    for (int rep = 0; rep < mc_samples; ++rep) {
        const int urban = static_cast<int>(rng.uniform_int(4));
        const double b = cfg.sigma_b > 0.0 ? rng.normal(0.0, cfg.sigma_b) : 0.0;
        double e[2];
        for (int obs = 0; obs < 2; ++obs) {
            double fixed = cfg.beta_intercept + urban_effect(cfg, urban);
            if (!cfg.beta_year.empty() && cfg.n_periods > 1) {
                const int t = static_cast<int>(rng.uniform_int(cfg.n_periods));
                if (t > 0) fixed += cfg.beta_year[t - 1];
            }
            for (std::size_t k = 0; k < n_cov; ++k) {
                fixed += cfg.beta_covariates[k] * rng.normal();
            }
            const double y = static_cast<double>(rng.poisson(std::exp(fixed + b)));
            const double m = std::exp(fixed + marginal_shift);
            e[obs] = (y - m) / std::sqrt(m);
        }
        s1 += e[0];
        s2 += e[1];
        s11 += e[0] * e[0];
        s22 += e[1] * e[1];
        s12 += e[0] * e[1];
    }
    const double n = mc_samples;
    const double cov = s12 / n - (s1 / n) * (s2 / n);
    const double v1 = s11 / n - (s1 / n) * (s1 / n);
    const double v2 = s22 / n - (s2 / n) * (s2 / n);
    return cov / std::sqrt(v1 * v2);
}

BootstrapResult cluster_bootstrap(const PanelTable& table, const ModelSpec& spec, int B,
                                  std::uint64_t seed, const StudyWindow& window) {
    if (B < 100) throw EnvironmentError("cluster bootstrap needs B >= 100");

    std::map<std::string, std::vector<const PanelRow*>> by_fips;
    for (const auto& row : table.rows) by_fips[row.fips].push_back(&row);
    std::vector<const std::vector<const PanelRow*>*> clusters;
    clusters.reserve(by_fips.size());
    for (const auto& [fips, rows] : by_fips) clusters.push_back(&rows);
    const std::size_t n_clusters = clusters.size();
    if (n_clusters == 0) throw AnalysisError("no clusters to bootstrap");

    std::vector<Eigen::VectorXd> betas;
    int failed = 0;
    for (int r = 1; r <= B; ++r) {
        Rng rng(seed ^ static_cast<std::uint64_t>(r));
        PanelTable resampled;
        resampled.covariate_names = table.covariate_names;
        for (std::size_t c = 0; c < n_clusters; ++c) {
            const auto& src = *clusters[rng.uniform_int(n_clusters)];
            for (const auto* row : src) {
                PanelRow copy = *row;
                copy.fips += "#" + std::to_string(c);  // copies stay distinct clusters
                resampled.rows.push_back(std::move(copy));
            }
        }
        try {
            const PanelDataset ds = build_panel(resampled, spec, window);
            const FitResult fit = gee_fit(ds, spec);
            if (fit.converged) {
                betas.push_back(fit.beta);
            } else {
                ++failed;
            }
        } catch (const AnalysisError&) {
            ++failed;
        }
    }
    if (failed > B / 10) {
        throw AnalysisError("cluster bootstrap: " + std::to_string(failed) + " of " +
                            std::to_string(B) + " replicates failed");
    }

    const int p = static_cast<int>(betas.front().size());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
    for (const auto& b : betas) mean += b;
    mean /= static_cast<double>(betas.size());
    Eigen::VectorXd ss = Eigen::VectorXd::Zero(p);
    for (const auto& b : betas) ss += (b - mean).cwiseAbs2();

    BootstrapResult result;
    result.n_replicates = static_cast<int>(betas.size());
    result.n_failed = failed;
    result.se = (ss / std::max<double>(1.0, betas.size() - 1.0)).cwiseSqrt();
    return result;
}

}  // namespace panelgee
