#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "panelgee/errors.hpp"
#include "panelgee/panel.hpp"
#include "panelgee/rng.hpp"

using namespace panelgee;

namespace {

const std::string kFixtures = FIXTURE_DIR;

// In-memory table with all 13 Table-style covariates over 2000-2013, enough
// counties to exercise the full design.
PanelTable full_schema_table(int n_counties = 6) {
    const std::vector<std::string> covs = {
        "JAIL_LATINO_PERCENT", "JAIL_BLACK_PERCENT",  "JAIL_PRETRIAL_PERCENT",
        "JAIL_OTHERCOUNTIES_RATE", "JAIL_STATES_RATE", "HISPANIC_PERCENT",
        "NHBLACK_PERCENT",     "POVERTY_PERCENT",      "UNEMPLOYMENT_PERCENT",
        "WELF_EXP_RATE",       "POLICE_EXP_RATE",      "PRISON_JAIL_PERCENT",
        "PRISON_TOTAL_RATE"};
    PanelTable table;
    table.covariate_names = covs;
    Rng rng(11);
    for (int c = 0; c < n_counties; ++c) {
        char fips[8];
        std::snprintf(fips, sizeof(fips), "%05d", c + 1);
        for (int year = 2000; year <= 2013; ++year) {
            PanelRow row;
            row.fips = fips;
            row.year = year;
            row.jail_rate = 100.0 + 400.0 * rng.uniform();
            row.population = 40000 + static_cast<long long>(rng.uniform_int(100000));
            row.urban_code = kUrbanLevels[rng.uniform_int(4)];
            for (const auto& cov : covs) {
                row.covariates[cov] = 50.0 * rng.uniform();
            }
            table.rows.push_back(row);
        }
    }
    return table;
}

}  // namespace

TEST_CASE("load_csv round-trips a hand-written fixture") {
    const PanelTable table = load_csv(kFixtures + "/panel_small.csv");
    REQUIRE(table.rows.size() == 3);
    CHECK(table.covariate_names ==
          std::vector<std::string>{"POVERTY_PERCENT", "UNEMPLOYMENT_PERCENT",
                                   "NHBLACK_PERCENT"});
    const PanelRow& first = table.rows[0];
    CHECK(first.fips == "01001");
    CHECK(first.year == 2000);
    CHECK(first.jail_rate == doctest::Approx(250.5));
    CHECK(first.population.value() == 45000);
    CHECK(first.urban_code == "rural");
    CHECK(first.covariates.at("POVERTY_PERCENT") == doctest::Approx(14.2));
}

TEST_CASE("empty cells are missing, never zero") {
    const PanelTable table = load_csv(kFixtures + "/panel_small.csv");
    const PanelRow& second = table.rows[1];
    CHECK_FALSE(second.has("POVERTY_PERCENT"));
    CHECK(second.has("UNEMPLOYMENT_PERCENT"));
}

TEST_CASE("missing mandatory column is reported by name") {
    CHECK_THROWS_WITH_AS(load_csv(kFixtures + "/panel_no_fips.csv"),
                         doctest::Contains("fips"), EnvironmentError);
}

TEST_CASE("unparseable numeric cell reports row and column") {
    std::ofstream out("bad_cell.csv");
    out << "fips,year,jail_rate,urban_code,POVERTY_PERCENT\n";
    out << "01001,2000,abc,rural,10\n";
    out.close();
    CHECK_THROWS_WITH_AS(load_csv("bad_cell.csv"), doctest::Contains("jail_rate"),
                         EnvironmentError);
}

TEST_CASE("validate flags range, category, population, and duplicate violations") {
    const PanelTable table = load_csv(kFixtures + "/panel_bad.csv");
    const ValidationReport report = validate(table);
    REQUIRE_FALSE(report.ok());

    int range = 0, category = 0, pop = 0;
    for (const auto& v : report.violations) {
        if (v.column == "POVERTY_PERCENT") ++range;
        if (v.column == "urban_code") ++category;
        if (v.column == "population") ++pop;
    }
    CHECK(range == 1);
    CHECK(category == 1);
    CHECK(pop == 1);
}

TEST_CASE("validate accepts the clean fixture") {
    CHECK(validate(load_csv(kFixtures + "/panel_small.csv")).ok());
}

TEST_CASE("validate flags duplicate county-years") {
    PanelTable table = load_csv(kFixtures + "/panel_small.csv");
    table.rows.push_back(table.rows[0]);
    const ValidationReport report = validate(table);
    bool dup = false;
    for (const auto& v : report.violations) {
        if (v.message.find("duplicate") != std::string::npos) dup = true;
    }
    CHECK(dup);
}

TEST_CASE("complete_case_filter counts drops per column") {
    PanelTable table = full_schema_table(1);
    table.rows[3].covariates.erase("POVERTY_PERCENT");
    table.rows[7].covariates.erase("POVERTY_PERCENT");
    const auto [kept, report] = complete_case_filter(table, {"POVERTY_PERCENT"});
    CHECK(kept.rows.size() == table.rows.size() - 2);
    CHECK(report.per_column.at("POVERTY_PERCENT") == 2);
    CHECK(report.n_dropped == 2);

    SUBCASE("kept rows are untouched") {
        CHECK(kept.rows[0].jail_rate == table.rows[0].jail_rate);
        CHECK(kept.rows[0].covariates == table.rows[0].covariates);
    }
}

TEST_CASE("empty required set keeps everything") {
    const PanelTable table = full_schema_table(1);
    const auto [kept, report] = complete_case_filter(table, {});
    CHECK(kept.rows.size() == table.rows.size());
    CHECK(report.n_dropped == 0);
}

TEST_CASE("all rows missing a required column leaves nothing") {
    PanelTable table = full_schema_table(1);
    for (auto& row : table.rows) row.covariates.erase("POVERTY_PERCENT");
    const auto [kept, report] = complete_case_filter(table, {"POVERTY_PERCENT"});
    CHECK(kept.rows.empty());
    CHECK(report.n_dropped == table.rows.size());
}

TEST_CASE("required column must exist in the schema") {
    const PanelTable table = full_schema_table(1);
    CHECK_THROWS_AS(complete_case_filter(table, {"NOT_A_COLUMN"}), EnvironmentError);
}

TEST_CASE("referent levels encode as all-zero indicators") {
    PanelTable table;
    PanelRow row;
    row.fips = "00001";
    row.year = 2000;
    row.jail_rate = 100.0;
    row.urban_code = "rural";
    table.rows.push_back(row);

    ModelSpec spec;
    spec.name = "urban_only";
    const PanelDataset rural = build_panel(table, spec);
    REQUIRE(rural.schema.size() == 4);
    CHECK(rural.clusters[0].X.row(0).isApprox(Eigen::RowVector4d(1, 0, 0, 0)));

    table.rows[0].urban_code = "large_metro_suburban";
    const PanelDataset suburban = build_panel(table, spec);
    CHECK(suburban.clusters[0].X.row(0).isApprox(Eigen::RowVector4d(1, 1, 0, 0)));
}

TEST_CASE("14 years of one county form a single ordered cluster") {
    const PanelTable table = full_schema_table(1);
    ModelSpec spec;
    spec.name = "urban_only";
    const PanelDataset ds = build_panel(table, spec);
    REQUIRE(ds.clusters.size() == 1);
    CHECK(ds.clusters[0].size() == 14);
    for (int j = 1; j < 14; ++j) {
        CHECK(ds.clusters[0].years(j) > ds.clusters[0].years(j - 1));
    }
}

TEST_CASE("full Table-style model has 30 design columns") {
    const PanelTable table = full_schema_table();
    ModelSpec spec;
    spec.name = "full";
    spec.include_year = true;
    spec.covariates = table.covariate_names;
    const PanelDataset ds = build_panel(table, spec);
    CHECK(ds.schema.size() == 30);
    CHECK(ds.referents.at("URBAN_CODE") == "URBAN_CODE: Rural");
    CHECK(ds.referents.at("YEAR") == "YEAR: 2000");
}

TEST_CASE("build_panel is permutation-invariant") {
    PanelTable table = full_schema_table(4);
    ModelSpec spec;
    spec.name = "full";
    spec.include_year = true;
    spec.covariates = table.covariate_names;
    const PanelDataset a = build_panel(table, spec);

    std::mt19937 shuffler(99);
    std::shuffle(table.rows.begin(), table.rows.end(), shuffler);
    const PanelDataset b = build_panel(table, spec);

    REQUIRE(a.clusters.size() == b.clusters.size());
    for (std::size_t i = 0; i < a.clusters.size(); ++i) {
        CHECK(a.clusters[i].fips == b.clusters[i].fips);
        CHECK(a.clusters[i].X == b.clusters[i].X);
        CHECK(a.clusters[i].y == b.clusters[i].y);
    }
    CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("duplicate county-year is rejected at build time") {
    PanelTable table = full_schema_table(1);
    table.rows.push_back(table.rows[0]);
    ModelSpec spec;
    spec.name = "urban_only";
    CHECK_THROWS_AS(build_panel(table, spec), AnalysisError);
}

TEST_CASE("unknown covariate in the spec is rejected") {
    const PanelTable table = full_schema_table(1);
    ModelSpec spec;
    spec.name = "bad";
    spec.covariates = {"NO_SUCH_COLUMN"};
    CHECK_THROWS_AS(build_panel(table, spec), EnvironmentError);
}

TEST_CASE("CSV round trip preserves the dataset") {
    const PanelTable table = full_schema_table(3);
    ModelSpec spec;
    spec.name = "full";
    spec.include_year = true;
    spec.covariates = table.covariate_names;
    const PanelDataset ds = build_panel(table, spec);

    std::ostringstream csv;
    write_csv(ds.source, csv);
    std::ofstream out("roundtrip.csv");
    out << csv.str();
    out.close();

    const PanelTable reloaded = load_csv("roundtrip.csv");
    CHECK(reloaded.covariate_names == ds.source.covariate_names);
    const PanelDataset ds2 = build_panel(reloaded, spec);
    REQUIRE(ds2.clusters.size() == ds.clusters.size());
    for (std::size_t i = 0; i < ds.clusters.size(); ++i) {
        CHECK(ds2.clusters[i].y.isApprox(ds.clusters[i].y, 1e-11));
        CHECK(ds2.clusters[i].X.isApprox(ds.clusters[i].X, 1e-11));
    }
}

TEST_CASE("count-offset mode fills log-exposure offsets") {
    PanelTable table = full_schema_table(1);
    ModelSpec spec;
    spec.name = "counts";
    spec.mode = ResponseMode::count_offset;
    const PanelDataset ds = build_panel(table, spec);
    const auto& cl = ds.clusters[0];
    const auto& row = table.rows[0];
    CHECK(cl.offset(0) ==
          doctest::Approx(std::log(static_cast<double>(*row.population) / 100000.0)));
    CHECK(cl.y(0) ==
          doctest::Approx(row.jail_rate * static_cast<double>(*row.population) / 100000.0));
}

TEST_CASE("compute_rate") {
    CHECK(compute_rate(500, 100000) == doctest::Approx(500.0));
    CHECK(compute_rate(145341, 45000000) == doctest::Approx(322.98).epsilon(0.0001));
    CHECK(compute_rate(0, 50000) == 0.0);
    CHECK_THROWS_AS(compute_rate(10, 0), AnalysisError);
}
