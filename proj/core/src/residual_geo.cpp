#include "panelgee/residual_geo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "panelgee/errors.hpp"
#include "panelgee/rng.hpp"

namespace panelgee {

std::vector<Eigen::VectorXd> response_residuals(const PanelDataset& data,
                                                const FitResult& fit) {
    if (fit.p != data.n_params() || fit.n_clusters != data.n_clusters()) {
        throw AnalysisError("fit and dataset dimensions do not match");
    }
    std::vector<Eigen::VectorXd> out;
    out.reserve(data.clusters.size());
    for (const auto& cl : data.clusters) {
        const Eigen::VectorXd mu = (cl.X * fit.beta + cl.offset).array().exp();
        out.push_back(cl.y - mu);
    }
    return out;
}

ResidualSurface county_mean_residual(const PanelDataset& data,
                                     const std::vector<Eigen::VectorXd>& residuals,
                                     const std::string& model_name) {
    if (residuals.size() != data.clusters.size()) {
        throw AnalysisError("residuals are not aligned to the dataset");
    }
    ResidualSurface surface;
    surface.model = model_name;
    for (std::size_t i = 0; i < data.clusters.size(); ++i) {
        const auto& cl = data.clusters[i];
        SurfaceEntry e;
        e.n_years = cl.size();
        e.mean_observed = cl.y.mean();
        e.mean_residual = residuals[i].mean();
        e.mean_expected = e.mean_observed - e.mean_residual;
        surface.entries[cl.fips] = e;
    }
    return surface;
}

std::vector<int> quantile_bins(const std::vector<double>& values, int k, bool* collapsed) {
    if (k < 2) throw AnalysisError("quantile binning needs k >= 2");
    if (values.empty()) throw AnalysisError("quantile binning needs at least one value");
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

    // Ties share the rank of their first occurrence so equal values land in
    // the same bin.
    std::vector<int> bins(n, 0);
    std::size_t distinct = 0;
    std::size_t first_of_run = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && values[order[i]] != values[order[i - 1]]) {
            first_of_run = i;
        }
        if (i == 0 || values[order[i]] != values[order[i - 1]]) ++distinct;
        bins[order[i]] = static_cast<int>(first_of_run * k / n);
    }
    if (collapsed) *collapsed = distinct < static_cast<std::size_t>(k);
    return bins;
}

void AdjacencyGraph::add_edge(const std::string& a, const std::string& b) {
    if (a == b) throw AnalysisError("self-loop in adjacency: " + a);
    auto& na = neighbors[a];
    auto& nb = neighbors[b];
    if (std::find(na.begin(), na.end(), b) == na.end()) na.push_back(b);
    if (std::find(nb.begin(), nb.end(), a) == nb.end()) nb.push_back(a);
}

AdjacencyGraph AdjacencyGraph::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw EnvironmentError("cannot open adjacency file: " + path);
    AdjacencyGraph g;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw EnvironmentError("adjacency line " + std::to_string(line_no) +
                                   ": expected `fips_a,fips_b`");
        }
        g.add_edge(line.substr(0, comma), line.substr(comma + 1));
    }
    return g;
}

namespace {

double moran_statistic(const std::vector<double>& z, double z2_sum,
                       const std::vector<std::vector<std::pair<int, double>>>& w,
                       double s0) {
    double cross = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        for (const auto& [j, wij] : w[i]) cross += wij * z[i] * z[j];
    }
    return (static_cast<double>(z.size()) / s0) * cross / z2_sum;
}

}  // namespace

MoranResult morans_i(const std::map<std::string, double>& values, const AdjacencyGraph& graph,
                     int permutations, std::uint64_t seed, bool row_standardize) {
    const std::size_t n = values.size();
    if (n < 3) throw AnalysisError("Moran's I needs at least 3 keyed values");

    std::vector<std::string> keys;
    std::vector<double> v;
    keys.reserve(n);
    v.reserve(n);
    for (const auto& [fips, val] : values) {
        keys.push_back(fips);
        v.push_back(val);
    }
    std::map<std::string, int> index;
    for (int i = 0; i < static_cast<int>(n); ++i) index[keys[i]] = i;

    std::vector<std::string> disconnected;
    for (const auto& fips : keys) {
        if (!graph.contains(fips)) disconnected.push_back(fips);
    }
    if (!disconnected.empty()) {
        std::ostringstream os;
        os << "adjacency graph does not cover:";
        for (const auto& f : disconnected) os << ' ' << f;
        throw AnalysisError(os.str());
    }

    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    std::vector<double> z(n);
    double z2_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        z[i] = v[i] - mean;
        z2_sum += z[i] * z[i];
    }
    if (z2_sum == 0.0) throw AnalysisError("Moran's I undefined: values have zero variance");

    // Weight lists restricted to keyed locations; edges to unkeyed counties
    // are ignored.
    std::vector<std::vector<std::pair<int, double>>> w(n);
    double s0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto it = graph.neighbors.find(keys[i]);
        double degree = 0.0;
        for (const auto& nb : it->second) {
            if (index.count(nb)) degree += 1.0;
        }
        for (const auto& nb : it->second) {
            const auto jt = index.find(nb);
            if (jt == index.end()) continue;
            const double wij = row_standardize ? 1.0 / degree : 1.0;
            w[i].push_back({jt->second, wij});
            s0 += wij;
        }
    }
    if (s0 == 0.0) throw AnalysisError("adjacency graph has no edges among keyed values");

    MoranResult result;
    result.I = moran_statistic(z, z2_sum, w, s0);
    result.permutations = permutations;
    if (permutations <= 0) {
        result.p_value = std::nan("");
        return result;
    }

    const double observed = std::abs(result.I);
    int m = 0;
    std::vector<double> zp(z);
    for (int b = 0; b < permutations; ++b) {
        Rng rng(seed + static_cast<std::uint64_t>(b) + 1);
        zp = z;
        for (std::size_t i = n - 1; i > 0; --i) {
            std::swap(zp[i], zp[rng.uniform_int(i + 1)]);
        }
        if (std::abs(moran_statistic(zp, z2_sum, w, s0)) >= observed) ++m;
    }
    result.p_value = static_cast<double>(m + 1) / (permutations + 1);
    return result;
}

nlohmann::json export_geojson(const ResidualSurface& surface, const nlohmann::json& geometry,
                              const std::string& fips_property,
                              std::vector<std::string>* unmatched) {
    if (!geometry.is_object() || geometry.value("type", "") != "FeatureCollection" ||
        !geometry.contains("features")) {
        throw EnvironmentError("geometry is not a GeoJSON FeatureCollection");
    }
    std::vector<double> residual_values;
    std::vector<std::string> fips_order;
    for (const auto& [fips, e] : surface.entries) {
        fips_order.push_back(fips);
        residual_values.push_back(e.mean_residual);
    }
    std::map<std::string, int> bin_of;
    if (residual_values.size() >= 2) {
        const auto bins = quantile_bins(residual_values, std::min<std::size_t>(
                                                             5, residual_values.size()));
        for (std::size_t i = 0; i < fips_order.size(); ++i) bin_of[fips_order[i]] = bins[i];
    } else if (residual_values.size() == 1) {
        bin_of[fips_order[0]] = 0;
    }

    nlohmann::json out = geometry;
    std::set<std::string> matched;
    for (auto& feature : out["features"]) {
        if (!feature.contains("properties") || !feature["properties"].contains(fips_property)) {
            throw EnvironmentError("feature is missing fips property '" + fips_property + "'");
        }
        std::string fips = feature["properties"][fips_property].is_string()
                               ? feature["properties"][fips_property].get<std::string>()
                               : feature["properties"][fips_property].dump();
        const auto it = surface.entries.find(fips);
        if (it == surface.entries.end()) {
            if (unmatched) unmatched->push_back("geometry-only: " + fips);
            continue;
        }
        matched.insert(fips);
        feature["properties"]["mean_residual"] = it->second.mean_residual;
        feature["properties"]["mean_observed"] = it->second.mean_observed;
        feature["properties"]["mean_expected"] = it->second.mean_expected;
        feature["properties"]["n_years"] = it->second.n_years;
        feature["properties"]["bin"] = bin_of.count(fips) ? bin_of[fips] : 0;
    }
    for (const auto& [fips, e] : surface.entries) {
        (void)e;
        if (!matched.count(fips) && unmatched) unmatched->push_back("surface-only: " + fips);
    }
    return out;
}

void write_surface_csv(const ResidualSurface& surface, std::ostream& out) {
    out << "fips,mean_observed,mean_expected,mean_residual,n_years\n";
    char buf[160];
    for (const auto& [fips, e] : surface.entries) {
        std::snprintf(buf, sizeof(buf), "%s,%.12g,%.12g,%.12g,%d\n", fips.c_str(),
                      e.mean_observed, e.mean_expected, e.mean_residual, e.n_years);
        out << buf;
    }
}

}  // namespace panelgee
