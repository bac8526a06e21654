// panelgee: fit marginal regression models to clustered county-year panels,
// run robust inference and QIC ladders, and export residual surfaces.
//
// Exit codes: 0 success, 1 analysis/validation finding, 2 environment/usage
// error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "panelgee/engine.hpp"
#include "panelgee/errors.hpp"
#include "panelgee/inference.hpp"
#include "panelgee/panel.hpp"
#include "panelgee/residual_geo.hpp"
#include "panelgee/simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace panelgee;

namespace {

struct RunConfig {
    std::string panel_csv;
    std::optional<std::string> adjacency;
    std::optional<std::string> geometry;
    std::string fips_property = "fips";
    ResponseMode mode = ResponseMode::rate_response;
    StudyWindow window;
    std::uint64_t seed = 1;
    double tolerance = 1e-8;
    int max_iter = 100;
    int moran_permutations = 999;
    bool row_standardize = false;
    std::vector<ModelSpec> models;
    std::optional<SimConfig> sim;
};

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw EnvironmentError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw EnvironmentError("config parse error in " + path + ": " + e.what());
    }

    RunConfig cfg;
    if (j.contains("input")) {
        const auto& input = j["input"];
        cfg.panel_csv = input.value("panel_csv", "");
        if (input.contains("adjacency")) cfg.adjacency = input["adjacency"].get<std::string>();
        if (input.contains("geometry")) cfg.geometry = input["geometry"].get<std::string>();
        cfg.fips_property = input.value("fips_property", "fips");
    }
    const std::string mode = j.value("mode", "rate-response");
    if (mode == "rate-response") {
        cfg.mode = ResponseMode::rate_response;
    } else if (mode == "count-offset") {
        cfg.mode = ResponseMode::count_offset;
    } else {
        throw EnvironmentError("unknown mode: " + mode);
    }
    if (j.contains("study_window")) {
        cfg.window.first = j["study_window"][0].get<int>();
        cfg.window.last = j["study_window"][1].get<int>();
    }
    cfg.seed = j.value("seed", 1ULL);
    cfg.tolerance = j.value("tolerance", 1e-8);
    cfg.max_iter = j.value("max_iter", 100);
    cfg.moran_permutations = j.value("moran_permutations", 999);
    cfg.row_standardize = j.value("row_standardize", false);
    const std::string default_corr = j.value("correlation", "exchangeable");

    std::vector<std::string> names;
    for (const auto& m : j.value("models", json::array())) {
        ModelSpec spec;
        spec.name = m.at("name").get<std::string>();
        spec.include_year = m.value("include_year", false);
        spec.covariates = m.value("covariates", std::vector<std::string>{});
        spec.corr.kind = parse_correlation(m.value("correlation", default_corr));
        spec.mode = cfg.mode;
        spec.tol = cfg.tolerance;
        spec.max_iter = cfg.max_iter;
        if (std::find(names.begin(), names.end(), spec.name) != names.end()) {
            throw EnvironmentError("duplicate model name in ladder: " + spec.name);
        }
        names.push_back(spec.name);
        cfg.models.push_back(std::move(spec));
    }

    if (j.contains("sim")) {
        const auto& s = j["sim"];
        SimConfig sim;
        sim.n_clusters = s.value("n_clusters", 100);
        sim.n_periods = s.value("n_periods", 8);
        sim.beta_intercept = s.value("beta_intercept", 5.0);
        sim.beta_urban = s.value("beta_urban", std::vector<double>{});
        sim.beta_year = s.value("beta_year", std::vector<double>{});
        sim.beta_covariates = s.value("beta_covariates", std::vector<double>{});
        sim.sigma_b = s.value("sigma_b", 0.0);
        sim.start_year = s.value("start_year", cfg.window.first);
        sim.seed = s.value("seed", cfg.seed);
        if (!sim.valid()) throw EnvironmentError("invalid sim block in config");
        cfg.sim = sim;
    }
    return cfg;
}

const ModelSpec& find_model(const RunConfig& cfg, const std::string& name) {
    for (const auto& m : cfg.models) {
        if (m.name == name) return m;
    }
    throw EnvironmentError("model '" + name + "' not found in config ladder");
}

std::vector<std::string> ladder_union(const RunConfig& cfg) {
    std::vector<std::string> required;
    for (const auto& m : cfg.models) {
        for (const auto& c : m.covariates) {
            if (std::find(required.begin(), required.end(), c) == required.end()) {
                required.push_back(c);
            }
        }
    }
    return required;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw EnvironmentError("cannot write " + path.string());
    out << content;
}

int cmd_validate(const RunConfig& cfg, const fs::path& out_dir) {
    const PanelTable table = load_csv(cfg.panel_csv);
    const ValidationReport report = validate(table, cfg.window);
    const auto [kept, drops] = complete_case_filter(table, ladder_union(cfg));
    (void)kept;
    write_file(out_dir / "validation.txt", report.to_text() + drops.to_text());
    write_file(out_dir / "validation.json", report.to_json());
    write_file(out_dir / "drops.json", drops.to_json());
    std::cout << report.to_text() << drops.to_text();
    return report.ok() ? 0 : 1;
}

CoefficientTable fit_one(const RunConfig& cfg, const ModelSpec& spec,
                         PanelDataset* out_data = nullptr, FitResult* out_fit = nullptr) {
    const PanelTable table = load_csv(cfg.panel_csv);
    auto [filtered, drops] = complete_case_filter(table, spec.covariates);
    (void)drops;
    PanelDataset ds = build_panel(filtered, spec, cfg.window);
    FitResult fit = gee_fit(ds, spec);
    CoefficientTable ct = coefficient_table(fit, ds, spec.name);
    if (out_data) *out_data = std::move(ds);
    if (out_fit) *out_fit = std::move(fit);
    return ct;
}

int cmd_fit(const RunConfig& cfg, const std::string& model, const fs::path& out_dir) {
    const ModelSpec& spec = find_model(cfg, model);
    const CoefficientTable ct = fit_one(cfg, spec);
    write_file(out_dir / (model + "_coefficients.txt"), ct.to_text());
    write_file(out_dir / (model + "_coefficients.json"), ct.to_json());
    std::cout << ct.to_text();
    if (!ct.converged) {
        std::cerr << "warning: model '" << model << "' did not converge\n";
        return 1;
    }
    return 0;
}

int cmd_nested(const RunConfig& cfg, const fs::path& out_dir) {
    if (cfg.models.size() < 2) {
        throw EnvironmentError("nested requires a ladder of at least 2 models");
    }
    const PanelTable table = load_csv(cfg.panel_csv);
    const NestedComparison cmp = nested_run(table, cfg.models, cfg.window);
    write_file(out_dir / "nested.txt", cmp.to_text());
    write_file(out_dir / "nested.json", cmp.to_json());
    std::cout << cmp.to_text();
    return 0;
}

int cmd_residuals(const RunConfig& cfg, const std::string& model, const fs::path& out_dir) {
    const ModelSpec& spec = find_model(cfg, model);
    PanelDataset ds;
    FitResult fit;
    fit_one(cfg, spec, &ds, &fit);
    if (!fit.converged) throw AnalysisError("model '" + model + "' did not converge");

    const auto residuals = response_residuals(ds, fit);
    const ResidualSurface surface = county_mean_residual(ds, residuals, model);

    std::ofstream csv(out_dir / "surface.csv");
    write_surface_csv(surface, csv);
    csv.close();

    if (cfg.geometry) {
        std::ifstream geo_in(*cfg.geometry);
        if (!geo_in) throw EnvironmentError("cannot open geometry: " + *cfg.geometry);
        json geometry;
        geo_in >> geometry;
        std::vector<std::string> unmatched;
        const json out = export_geojson(surface, geometry, cfg.fips_property, &unmatched);
        write_file(out_dir / "surface.geojson", out.dump(2));
        for (const auto& u : unmatched) std::cerr << "unmatched fips: " << u << '\n';
    } else {
        std::cerr << "warning: no geometry configured; skipping GeoJSON export\n";
    }

    if (cfg.adjacency) {
        const AdjacencyGraph graph = AdjacencyGraph::load(*cfg.adjacency);
        std::map<std::string, double> values;
        for (const auto& [fips, e] : surface.entries) values[fips] = e.mean_residual;
        const MoranResult moran =
            morans_i(values, graph, cfg.moran_permutations, cfg.seed, cfg.row_standardize);
        json mj;
        mj["model"] = model;
        mj["moran_i"] = moran.I;
        mj["p_value"] = moran.p_value;
        mj["permutations"] = moran.permutations;
        write_file(out_dir / "moran.json", mj.dump(2));
        std::cout << "Moran's I: " << moran.I << " (permutation p = " << moran.p_value
                  << ", B = " << moran.permutations << ")\n";
    } else {
        std::cerr << "warning: no adjacency configured; skipping Moran's I\n";
    }
    return 0;
}

int cmd_simulate(const RunConfig& cfg, const fs::path& out_dir) {
    if (!cfg.sim) throw EnvironmentError("config has no sim block");
    const PanelTable table = simulate_panel(*cfg.sim);
    write_csv(table, (out_dir / "panel.csv").string());
    const Eigen::VectorXd beta = sim_true_marginal_beta(*cfg.sim);
    std::cout << "simulated " << cfg.sim->n_clusters << " clusters x " << cfg.sim->n_periods
              << " periods (seed " << cfg.sim->seed << ")\n";
    std::cout << "true marginal coefficients:";
    for (int i = 0; i < beta.size(); ++i) std::cout << ' ' << beta(i);
    std::cout << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GEE fitting, inference, and residual mapping for county-year panels"};
    app.require_subcommand(1);

    std::string config_path, model_name, out_dir_str = ".";
    std::optional<std::uint64_t> seed_override;
    int threads = 1;

    auto add_common = [&](CLI::App* sub, bool needs_model) {
        sub->add_option("--config", config_path, "run configuration file (JSON)")->required();
        sub->add_option("--out", out_dir_str, "output directory");
        sub->add_option("--seed", seed_override, "override the config seed");
        sub->add_option("--threads", threads, "worker thread cap")->check(CLI::PositiveNumber);
        if (needs_model) {
            sub->add_option("--model", model_name, "ladder model name")->required();
        }
    };

    CLI::App* validate_cmd = app.add_subcommand("validate", "validate the panel CSV");
    CLI::App* fit_cmd = app.add_subcommand("fit", "fit one ladder model");
    CLI::App* nested_cmd = app.add_subcommand("nested", "fit the whole nested ladder");
    CLI::App* residuals_cmd =
        app.add_subcommand("residuals", "residual surface, GeoJSON, Moran's I");
    CLI::App* simulate_cmd = app.add_subcommand("simulate", "write a synthetic panel CSV");
    add_common(validate_cmd, false);
    add_common(fit_cmd, true);
    add_common(nested_cmd, false);
    add_common(residuals_cmd, true);
    add_common(simulate_cmd, false);

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_config(config_path);
        if (seed_override) {
            cfg.seed = *seed_override;
            if (cfg.sim) cfg.sim->seed = *seed_override;
        }
        const fs::path out_dir(out_dir_str);
        std::error_code ec;
        fs::create_directories(out_dir, ec);

        if (validate_cmd->parsed()) return cmd_validate(cfg, out_dir);
        if (fit_cmd->parsed()) return cmd_fit(cfg, model_name, out_dir);
        if (nested_cmd->parsed()) return cmd_nested(cfg, out_dir);
        if (residuals_cmd->parsed()) return cmd_residuals(cfg, model_name, out_dir);
        if (simulate_cmd->parsed()) return cmd_simulate(cfg, out_dir);
        return 2;
    } catch (const EnvironmentError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const AnalysisError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
