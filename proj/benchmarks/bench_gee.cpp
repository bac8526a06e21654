#include <benchmark/benchmark.h>

#include <cmath>

#include "panelgee/correlation.hpp"
#include "panelgee/engine.hpp"
#include "panelgee/simulate.hpp"

using namespace panelgee;

namespace {

PanelDataset make_panel(int n_clusters, int n_periods, CorrelationKind kind,
                        ModelSpec* out_spec) {
    SimConfig cfg;
    cfg.n_clusters = n_clusters;
    cfg.n_periods = n_periods;
    cfg.beta_intercept = std::log(250.0);
    cfg.beta_urban = {-0.1, -0.35, -0.05};
    cfg.beta_year = std::vector<double>(n_periods - 1, 0.02);
    cfg.beta_covariates = std::vector<double>(13, 0.05);
    cfg.sigma_b = 0.4;
    cfg.seed = 20240101;
    *out_spec = sim_model_spec(cfg, kind);
    return build_panel(simulate_panel(cfg), *out_spec);
}

void BM_gee_fit_exchangeable(benchmark::State& state) {
    ModelSpec spec;
    const PanelDataset ds =
        make_panel(static_cast<int>(state.range(0)), 14, CorrelationKind::exchangeable, &spec);
    for (auto _ : state) {
        benchmark::DoNotOptimize(gee_fit(ds, spec));
    }
    state.SetItemsProcessed(state.iterations() * ds.n_obs());
}

void BM_gee_fit_ar1(benchmark::State& state) {
    ModelSpec spec;
    const PanelDataset ds =
        make_panel(static_cast<int>(state.range(0)), 14, CorrelationKind::ar1, &spec);
    for (auto _ : state) {
        benchmark::DoNotOptimize(gee_fit(ds, spec));
    }
    state.SetItemsProcessed(state.iterations() * ds.n_obs());
}

void BM_inverse_correlation(benchmark::State& state) {
    Eigen::VectorXi years(14);
    for (int i = 0; i < 14; ++i) years(i) = 2000 + i;
    const WorkingCorrelation corr{CorrelationKind::exchangeable, 0.4};
    for (auto _ : state) {
        benchmark::DoNotOptimize(inverse_correlation(corr, years));
    }
}

}  // namespace

BENCHMARK(BM_gee_fit_exchangeable)->Arg(500)->Arg(2858)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gee_fit_ar1)->Arg(500)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_inverse_correlation);

BENCHMARK_MAIN();
