#include "panelgee/panel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "panelgee/errors.hpp"

namespace panelgee {

using nlohmann::json;

std::string urban_label(const std::string& level) {
    if (level == "rural") return "URBAN_CODE: Rural";
    if (level == "small_mid_metro") return "URBAN_CODE: Small and Mid Metros";
    if (level == "large_metro_suburban") return "URBAN_CODE: Large Metro, Suburban";
    if (level == "large_metro_urban") return "URBAN_CODE: Large Metro, Urban";
    return "URBAN_CODE: " + level;
}

namespace {

const std::vector<std::string> kReservedColumns = {"fips", "year", "jail_rate",
                                                   "population", "urban_code"};

bool reserved(const std::string& name) {
    return std::find(kReservedColumns.begin(), kReservedColumns.end(), name) !=
           kReservedColumns.end();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double(const std::string& cell, std::size_t row, const std::string& col) {
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(cell, &pos);
    } catch (const std::exception&) {
        throw EnvironmentError("row " + std::to_string(row) + ", column " + col +
                               ": unparseable numeric value '" + cell + "'");
    }
    if (pos != cell.size()) {
        throw EnvironmentError("row " + std::to_string(row) + ", column " + col +
                               ": unparseable numeric value '" + cell + "'");
    }
    return v;
}

long long parse_int(const std::string& cell, std::size_t row, const std::string& col) {
    std::size_t pos = 0;
    long long v;
    try {
        v = std::stoll(cell, &pos);
    } catch (const std::exception&) {
        throw EnvironmentError("row " + std::to_string(row) + ", column " + col +
                               ": unparseable integer value '" + cell + "'");
    }
    if (pos != cell.size()) {
        throw EnvironmentError("row " + std::to_string(row) + ", column " + col +
                               ": unparseable integer value '" + cell + "'");
    }
    return v;
}

std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

bool is_percent_column(const std::string& name) {
    return name.size() >= 8 && name.compare(name.size() - 8, 8, "_PERCENT") == 0;
}

}  // namespace

PanelTable load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw EnvironmentError("cannot open CSV file: " + path);

    std::string header_line;
    if (!std::getline(in, header_line)) {
        throw EnvironmentError("empty CSV file: " + path);
    }
    const std::vector<std::string> header = split_csv_line(header_line);

    std::map<std::string, int> index;
    for (int i = 0; i < static_cast<int>(header.size()); ++i) index[header[i]] = i;
    for (const char* col : {"fips", "year", "jail_rate", "urban_code"}) {
        if (!index.count(col)) {
            throw EnvironmentError("CSV header is missing mandatory column '" +
                                   std::string(col) + "' in " + path);
        }
    }

    PanelTable table;
    for (const auto& col : header) {
        if (!reserved(col)) table.covariate_names.push_back(col);
    }

    std::string line;
    std::size_t row_no = 0;
    while (std::getline(in, line)) {
        ++row_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw EnvironmentError("row " + std::to_string(row_no) + ": expected " +
                                   std::to_string(header.size()) + " fields, got " +
                                   std::to_string(fields.size()));
        }
        PanelRow row;
        row.fips = fields[index["fips"]];
        row.year = static_cast<int>(parse_int(fields[index["year"]], row_no, "year"));
        row.jail_rate = parse_double(fields[index["jail_rate"]], row_no, "jail_rate");
        row.urban_code = fields[index["urban_code"]];
        if (index.count("population") && !fields[index["population"]].empty()) {
            row.population = parse_int(fields[index["population"]], row_no, "population");
        }
        for (int i = 0; i < static_cast<int>(header.size()); ++i) {
            if (reserved(header[i])) continue;
            const std::string& cell = fields[i];
            if (cell.empty()) continue;  // missing, not zero
            row.covariates[header[i]] = parse_double(cell, row_no, header[i]);
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

void write_csv(const PanelTable& table, std::ostream& out) {
    out << "fips,year,jail_rate,population,urban_code";
    for (const auto& c : table.covariate_names) out << ',' << c;
    out << '\n';
    for (const auto& row : table.rows) {
        out << row.fips << ',' << row.year << ',' << format_value(row.jail_rate) << ',';
        if (row.population) out << *row.population;
        out << ',' << row.urban_code;
        for (const auto& c : table.covariate_names) {
            out << ',';
            auto it = row.covariates.find(c);
            if (it != row.covariates.end()) out << format_value(it->second);
        }
        out << '\n';
    }
}

void write_csv(const PanelTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw EnvironmentError("cannot write CSV file: " + path);
    write_csv(table, out);
}

std::string ValidationReport::to_text() const {
    std::ostringstream os;
    if (violations.empty()) {
        os << "validation: OK\n";
        return os.str();
    }
    os << "validation: " << violations.size() << " violation(s)\n";
    for (const auto& v : violations) {
        os << "  row " << v.row << " [" << v.column << "] " << v.message << '\n';
    }
    return os.str();
}

std::string ValidationReport::to_json() const {
    json j;
    j["n_violations"] = violations.size();
    j["violations"] = json::array();
    for (const auto& v : violations) {
        j["violations"].push_back({{"row", v.row}, {"column", v.column}, {"message", v.message}});
    }
    return j.dump(2);
}

ValidationReport validate(const PanelTable& table, const StudyWindow& window) {
    ValidationReport report;
    std::set<std::pair<std::string, int>> seen;
    std::size_t row_no = 0;
    for (const auto& row : table.rows) {
        ++row_no;
        if (!(row.jail_rate >= 0.0) || !std::isfinite(row.jail_rate)) {
            report.violations.push_back({row_no, "jail_rate", "must be a finite non-negative rate"});
        }
        if (row.population && *row.population <= 0) {
            report.violations.push_back({row_no, "population", "must be positive"});
        }
        if (row.year < window.first || row.year > window.last) {
            report.violations.push_back(
                {row_no, "year",
                 "outside study window [" + std::to_string(window.first) + ", " +
                     std::to_string(window.last) + "]"});
        }
        if (std::find(kUrbanLevels.begin(), kUrbanLevels.end(), row.urban_code) ==
            kUrbanLevels.end()) {
            report.violations.push_back(
                {row_no, "urban_code", "unknown category '" + row.urban_code + "'"});
        }
        for (const auto& [name, value] : row.covariates) {
            if (is_percent_column(name) && (value < 0.0 || value > 100.0)) {
                report.violations.push_back(
                    {row_no, name, "percent value " + format_value(value) + " outside [0, 100]"});
            }
        }
        if (!seen.insert({row.fips, row.year}).second) {
            report.violations.push_back(
                {row_no, "fips",
                 "duplicate county-year (" + row.fips + ", " + std::to_string(row.year) + ")"});
        }
    }
    return report;
}

std::string DropReport::to_text() const {
    std::ostringstream os;
    os << "complete-case filter: kept " << n_kept << ", dropped " << n_dropped << '\n';
    for (const auto& [col, n] : per_column) os << "  missing " << col << ": " << n << '\n';
    return os.str();
}

std::string DropReport::to_json() const {
    json j;
    j["kept"] = n_kept;
    j["dropped"] = n_dropped;
    j["per_column"] = per_column;
    j["per_fips"] = per_fips;
    return j.dump(2);
}

std::pair<PanelTable, DropReport> complete_case_filter(
    const PanelTable& table, const std::vector<std::string>& required) {
    for (const auto& col : required) {
        if (std::find(table.covariate_names.begin(), table.covariate_names.end(), col) ==
            table.covariate_names.end()) {
            throw EnvironmentError("required column not in schema: " + col);
        }
    }
    PanelTable kept;
    kept.covariate_names = table.covariate_names;
    DropReport report;
    for (const auto& row : table.rows) {
        bool complete = true;
        for (const auto& col : required) {
            if (!row.has(col)) {
                complete = false;
                ++report.per_column[col];
            }
        }
        if (complete) {
            kept.rows.push_back(row);
            ++report.n_kept;
        } else {
            ++report.per_fips[row.fips];
            ++report.n_dropped;
        }
    }
    return {std::move(kept), report};
}

int PanelDataset::n_obs() const {
    int n = 0;
    for (const auto& c : clusters) n += c.size();
    return n;
}

int PanelDataset::max_cluster_size() const {
    int n = 0;
    for (const auto& c : clusters) n = std::max(n, c.size());
    return n;
}

std::uint64_t PanelDataset::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& c : clusters) {
        mix(c.fips.data(), c.fips.size());
        for (int j = 0; j < c.size(); ++j) {
            const int yr = c.years(j);
            mix(&yr, sizeof(yr));
        }
    }
    return h;
}

PanelDataset build_panel(const PanelTable& table, const ModelSpec& spec,
                         const StudyWindow& window) {
    for (const auto& col : spec.covariates) {
        if (std::find(table.covariate_names.begin(), table.covariate_names.end(), col) ==
            table.covariate_names.end()) {
            throw EnvironmentError("unknown covariate in model spec: " + col);
        }
    }

    // Group rows by county, sorted by year; detect duplicates.
    std::map<std::string, std::vector<const PanelRow*>> by_fips;
    std::set<std::pair<std::string, int>> seen;
    std::set<int> years_present;
    for (const auto& row : table.rows) {
        if (!seen.insert({row.fips, row.year}).second) {
            throw AnalysisError("duplicate county-year (" + row.fips + ", " +
                                std::to_string(row.year) + ")");
        }
        by_fips[row.fips].push_back(&row);
        years_present.insert(row.year);
    }

    std::vector<int> year_levels(years_present.begin(), years_present.end());
    const int year_referent = year_levels.empty() ? window.first : year_levels.front();

    PanelDataset ds;
    ds.referents["URBAN_CODE"] = urban_label("rural");
    ds.schema.push_back("(Intercept)");
    for (const auto& level : kUrbanIndicatorOrder) ds.schema.push_back(urban_label(level));
    if (spec.include_year) {
        ds.referents["YEAR"] = "YEAR: " + std::to_string(year_referent);
        for (int y : year_levels) {
            if (y != year_referent) ds.schema.push_back("YEAR: " + std::to_string(y));
        }
    }
    for (const auto& col : spec.covariates) ds.schema.push_back(col);
    const int p = static_cast<int>(ds.schema.size());

    ds.source.covariate_names = table.covariate_names;
    for (auto& [fips, rows] : by_fips) {
        std::sort(rows.begin(), rows.end(),
                  [](const PanelRow* a, const PanelRow* b) { return a->year < b->year; });
        Cluster cl;
        cl.fips = fips;
        const int n = static_cast<int>(rows.size());
        cl.years.resize(n);
        cl.y.resize(n);
        cl.offset = Eigen::VectorXd::Zero(n);
        cl.X = Eigen::MatrixXd::Zero(n, p);
        for (int j = 0; j < n; ++j) {
            const PanelRow& row = *rows[j];
            cl.years(j) = row.year;
            if (spec.mode == ResponseMode::count_offset) {
                if (!row.population) {
                    throw AnalysisError("count-offset mode requires population (" + row.fips +
                                        ", " + std::to_string(row.year) + ")");
                }
                cl.y(j) = row.jail_rate * static_cast<double>(*row.population) / 100000.0;
                cl.offset(j) = std::log(static_cast<double>(*row.population) / 100000.0);
            } else {
                cl.y(j) = row.jail_rate;
            }
            int col = 0;
            cl.X(j, col++) = 1.0;
            for (const auto& level : kUrbanIndicatorOrder) {
                cl.X(j, col++) = (row.urban_code == level) ? 1.0 : 0.0;
            }
            if (row.urban_code != "rural" &&
                std::find(kUrbanIndicatorOrder.begin(), kUrbanIndicatorOrder.end(),
                          row.urban_code) == kUrbanIndicatorOrder.end()) {
                throw AnalysisError("unknown urban_code '" + row.urban_code + "' (" + row.fips +
                                    ", " + std::to_string(row.year) + ")");
            }
            if (spec.include_year) {
                for (int y : year_levels) {
                    if (y != year_referent) cl.X(j, col++) = (row.year == y) ? 1.0 : 0.0;
                }
            }
            for (const auto& name : spec.covariates) {
                auto it = row.covariates.find(name);
                if (it == row.covariates.end()) {
                    throw AnalysisError("missing value for covariate " + name + " (" + row.fips +
                                        ", " + std::to_string(row.year) + ")");
                }
                cl.X(j, col++) = it->second;
            }
            ds.source.rows.push_back(row);
        }
        ds.clusters.push_back(std::move(cl));
    }
    return ds;
}

double compute_rate(double count, long long population) {
    if (population <= 0) throw AnalysisError("population must be positive");
    if (count < 0.0) throw AnalysisError("count must be non-negative");
    return count / static_cast<double>(population) * 100000.0;
}

}  // namespace panelgee
