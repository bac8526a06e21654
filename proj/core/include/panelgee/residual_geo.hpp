#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "panelgee/engine.hpp"
#include "panelgee/panel.hpp"

namespace panelgee {

// Per-observation response residuals y - mu_hat, per cluster. Positive means
// the observed rate was higher than the model expected.
std::vector<Eigen::VectorXd> response_residuals(const PanelDataset& data,
                                                const FitResult& fit);

struct SurfaceEntry {
    double mean_observed = 0.0;
    double mean_expected = 0.0;
    double mean_residual = 0.0;
    int n_years = 0;
};

struct ResidualSurface {
    std::string model;
    std::map<std::string, SurfaceEntry> entries;  // keyed by fips
};

ResidualSurface county_mean_residual(const PanelDataset& data,
                                     const std::vector<Eigen::VectorXd>& residuals,
                                     const std::string& model_name = "");

// Rank-based quantile classes, lower-inclusive; equal values share a bin.
// Sets *collapsed when fewer than k distinct values exist.
std::vector<int> quantile_bins(const std::vector<double>& values, int k,
                               bool* collapsed = nullptr);

// Binary contiguity neighbour lists keyed by fips; undirected, no self-loops.
struct AdjacencyGraph {
    std::map<std::string, std::vector<std::string>> neighbors;

    void add_edge(const std::string& a, const std::string& b);
    bool contains(const std::string& fips) const { return neighbors.count(fips) != 0; }
    static AdjacencyGraph load(const std::string& path);  // lines of `fips_a,fips_b`
};

struct MoranResult {
    double I = 0.0;
    double p_value = 1.0;
    int permutations = 0;
};

// Global Moran's I with a two-sided permutation p-value using the
// (m+1)/(B+1) convention, m counting permuted |I| >= observed |I|.
// Weights are binary contiguity; row_standardize divides each row by its
// degree. Permutation b is driven by an Rng seeded with seed + b + 1, so the
// result is schedule-independent.
MoranResult morans_i(const std::map<std::string, double>& values, const AdjacencyGraph& graph,
                     int permutations, std::uint64_t seed, bool row_standardize = false);

// Injects mean_residual / mean_observed / mean_expected / bin properties into
// matching features of a GeoJSON feature collection. Unmatched fips on either
// side are appended to *unmatched.
nlohmann::json export_geojson(const ResidualSurface& surface, const nlohmann::json& geometry,
                              const std::string& fips_property,
                              std::vector<std::string>* unmatched = nullptr);

void write_surface_csv(const ResidualSurface& surface, std::ostream& out);

}  // namespace panelgee
