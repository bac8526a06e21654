#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "panelgee/correlation.hpp"

namespace panelgee {

// Four-level NCHS-style urbanicity classification. "rural" is the referent;
// the design-column order matches the coefficient-table row order
// (suburban, urban, small/mid).
inline const std::vector<std::string> kUrbanLevels = {
    "rural", "small_mid_metro", "large_metro_suburban", "large_metro_urban"};
inline const std::vector<std::string> kUrbanIndicatorOrder = {
    "large_metro_suburban", "large_metro_urban", "small_mid_metro"};

std::string urban_label(const std::string& level);

struct StudyWindow {
    int first = 2000;
    int last = 2013;
};

// One county-year line of the input CSV. Covariates hold only the cells that
// were present; a missing cell is an absent key, never a zero.
struct PanelRow {
    std::string fips;
    int year = 0;
    double jail_rate = 0.0;
    std::optional<long long> population;
    std::string urban_code;
    std::map<std::string, double> covariates;

    bool has(const std::string& name) const { return covariates.count(name) != 0; }
};

struct PanelTable {
    std::vector<std::string> covariate_names;
    std::vector<PanelRow> rows;
};

PanelTable load_csv(const std::string& path);
void write_csv(const PanelTable& table, std::ostream& out);
void write_csv(const PanelTable& table, const std::string& path);

struct Violation {
    std::size_t row;  // 1-based data line (header excluded)
    std::string column;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
    std::string to_text() const;
    std::string to_json() const;
};

ValidationReport validate(const PanelTable& table, const StudyWindow& window = {});

struct DropReport {
    std::map<std::string, int> per_column;
    std::map<std::string, int> per_fips;
    std::size_t n_kept = 0;
    std::size_t n_dropped = 0;
    std::string to_text() const;
    std::string to_json() const;
};

// Complete-case filter: keep only rows with every required covariate present.
// Kept rows are copied untouched.
std::pair<PanelTable, DropReport> complete_case_filter(
    const PanelTable& table, const std::vector<std::string>& required);

enum class ResponseMode { rate_response, count_offset };

// Declarative description of one regression in the ladder.
struct ModelSpec {
    std::string name;
    bool include_year = false;
    std::vector<std::string> covariates;
    WorkingCorrelation corr{CorrelationKind::exchangeable, 0.0};
    ResponseMode mode = ResponseMode::rate_response;
    double tol = 1e-8;
    int max_iter = 100;
};

struct Cluster {
    std::string fips;
    Eigen::VectorXi years;
    Eigen::VectorXd y;
    Eigen::MatrixXd X;
    Eigen::VectorXd offset;

    int size() const { return static_cast<int>(y.size()); }
};

struct PanelDataset {
    std::vector<Cluster> clusters;
    std::vector<std::string> schema;  // design column names, intercept first
    std::map<std::string, std::string> referents;
    PanelTable source;  // filtered rows the design was built from

    int n_obs() const;
    int n_params() const { return static_cast<int>(schema.size()); }
    int n_clusters() const { return static_cast<int>(clusters.size()); }
    int max_cluster_size() const;
    // FNV-1a over the cluster keys and sizes; lets nested runs assert that
    // every ladder model saw the identical filtered sample.
    std::uint64_t fingerprint() const;
};

// Design matrix: intercept, urbanicity indicators (rural referent), year
// indicators (earliest year referent, only when spec.include_year), then the
// continuous covariates in spec order. Clusters are grouped by fips and
// sorted by year, so construction is permutation-invariant.
PanelDataset build_panel(const PanelTable& table, const ModelSpec& spec,
                         const StudyWindow& window = {});

double compute_rate(double count, long long population);

}  // namespace panelgee
