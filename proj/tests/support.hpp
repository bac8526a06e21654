#pragma once

// Shared helpers for the test suites: hand-built datasets and independently
// coded oracles. Everything here stays off the library's solver path so the
// comparisons mean something.

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "panelgee/panel.hpp"
#include "panelgee/rng.hpp"

namespace testsupport {

using panelgee::PanelDataset;

// Dataset of singleton clusters with an intercept-only design.
inline PanelDataset singleton_dataset(const std::vector<double>& y,
                                      const std::vector<double>& offset = {}) {
    PanelDataset ds;
    ds.schema = {"(Intercept)"};
    for (std::size_t i = 0; i < y.size(); ++i) {
        panelgee::Cluster cl;
        char fips[8];
        std::snprintf(fips, sizeof(fips), "%05zu", i + 1);
        cl.fips = fips;
        cl.years = Eigen::VectorXi::Constant(1, 2000);
        cl.y = Eigen::VectorXd::Constant(1, y[i]);
        cl.X = Eigen::MatrixXd::Ones(1, 1);
        cl.offset = Eigen::VectorXd::Constant(1, offset.empty() ? 0.0 : offset[i]);
        ds.clusters.push_back(std::move(cl));
    }
    return ds;
}

// Dataset with explicit per-cluster responses and designs.
inline PanelDataset clustered_dataset(const std::vector<Eigen::VectorXd>& ys,
                                      const std::vector<Eigen::MatrixXd>& xs) {
    PanelDataset ds;
    ds.schema.resize(xs.front().cols());
    ds.schema[0] = "(Intercept)";
    for (int c = 1; c < xs.front().cols(); ++c) ds.schema[c] = "x" + std::to_string(c);
    for (std::size_t i = 0; i < ys.size(); ++i) {
        panelgee::Cluster cl;
        char fips[8];
        std::snprintf(fips, sizeof(fips), "%05zu", i + 1);
        cl.fips = fips;
        const int n = static_cast<int>(ys[i].size());
        cl.years.resize(n);
        for (int j = 0; j < n; ++j) cl.years(j) = 2000 + j;
        cl.y = ys[i];
        cl.X = xs[i];
        cl.offset = Eigen::VectorXd::Zero(n);
        ds.clusters.push_back(std::move(cl));
    }
    return ds;
}

// Random small clustered quasi-Poisson dataset for oracle comparisons.
inline PanelDataset random_dataset(panelgee::Rng& rng, int max_rows = 500) {
    const int p = 2 + static_cast<int>(rng.uniform_int(3));
    const int n_clusters = 5 + static_cast<int>(rng.uniform_int(20));
    std::vector<Eigen::VectorXd> ys;
    std::vector<Eigen::MatrixXd> xs;
    int total = 0;
    for (int c = 0; c < n_clusters && total < max_rows; ++c) {
        const int n = 1 + static_cast<int>(rng.uniform_int(8));
        Eigen::MatrixXd X = Eigen::MatrixXd::Ones(n, p);
        Eigen::VectorXd y(n);
        for (int j = 0; j < n; ++j) {
            double eta = 2.0;
            for (int k = 1; k < p; ++k) {
                X(j, k) = rng.normal();
                eta += 0.3 * X(j, k);
            }
            y(j) = static_cast<double>(rng.poisson(std::exp(eta)));
        }
        ys.push_back(y);
        xs.push_back(X);
        total += n;
    }
    return clustered_dataset(ys, xs);
}

// Independently coded quasi-Poisson Newton solver (working independence).
// Full-pivot LU on the observed-score system, convergence on the score norm:
// a different route to the same estimate as the library's IRLS.
inline Eigen::VectorXd newton_poisson_oracle(const PanelDataset& ds, double tol = 1e-12,
                                             int max_iter = 200) {
    const int p = static_cast<int>(ds.schema.size());
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    double ysum = 0.0, esum = 0.0;
    for (const auto& cl : ds.clusters) {
        ysum += cl.y.sum();
        esum += cl.offset.array().exp().sum();
    }
    beta(0) = std::log(ysum / esum);
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd score = Eigen::VectorXd::Zero(p);
        Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
        for (const auto& cl : ds.clusters) {
            const Eigen::VectorXd mu = (cl.X * beta + cl.offset).array().exp();
            score += cl.X.transpose() * (cl.y - mu);
            info += cl.X.transpose() * mu.asDiagonal() * cl.X;
        }
        if (score.cwiseAbs().maxCoeff() < tol * (1.0 + beta.cwiseAbs().maxCoeff())) break;
        beta += info.fullPivLu().solve(score);
    }
    return beta;
}

}  // namespace testsupport
