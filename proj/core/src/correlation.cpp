#include "panelgee/correlation.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "panelgee/errors.hpp"

namespace panelgee {

const char* correlation_name(CorrelationKind kind) {
    switch (kind) {
        case CorrelationKind::independence: return "independence";
        case CorrelationKind::exchangeable: return "exchangeable";
        case CorrelationKind::ar1: return "ar1";
    }
    return "?";
}

CorrelationKind parse_correlation(const std::string& name) {
    if (name == "independence") return CorrelationKind::independence;
    if (name == "exchangeable") return CorrelationKind::exchangeable;
    if (name == "ar1") return CorrelationKind::ar1;
    throw EnvironmentError("unknown correlation structure: " + name);
}

std::pair<double, double> alpha_bounds(CorrelationKind kind, int n_max) {
    switch (kind) {
        case CorrelationKind::independence:
            return {0.0, 0.0};
        case CorrelationKind::exchangeable:
            if (n_max <= 1) return {-1.0, 1.0};
            return {-1.0 / (n_max - 1), 1.0};
        case CorrelationKind::ar1:
            return {-1.0, 1.0};
    }
    return {0.0, 0.0};
}

bool alpha_valid(CorrelationKind kind, double alpha, int n_max) {
    if (kind == CorrelationKind::independence) return true;
    if (n_max <= 1) return true;
    auto [lo, hi] = alpha_bounds(kind, n_max);
    return alpha > lo && alpha < hi;
}

namespace {

void require_valid(const WorkingCorrelation& corr, int n) {
    if (!alpha_valid(corr.kind, corr.alpha, n)) {
        auto [lo, hi] = alpha_bounds(corr.kind, n);
        throw AnalysisError("alpha " + std::to_string(corr.alpha) + " outside (" +
                            std::to_string(lo) + ", " + std::to_string(hi) + ") for " +
                            correlation_name(corr.kind) + " with n=" + std::to_string(n));
    }
}

}  // namespace

Eigen::MatrixXd correlation_matrix(const WorkingCorrelation& corr,
                                   const Eigen::VectorXi& years) {
    const int n = static_cast<int>(years.size());
    require_valid(corr, n);
    Eigen::MatrixXd R = Eigen::MatrixXd::Identity(n, n);
    switch (corr.kind) {
        case CorrelationKind::independence:
            break;
        case CorrelationKind::exchangeable:
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k)
                    if (j != k) R(j, k) = corr.alpha;
            break;
        case CorrelationKind::ar1:
            for (int j = 0; j < n; ++j)
                for (int k = j + 1; k < n; ++k) {
                    const double r = std::pow(corr.alpha, std::abs(years(k) - years(j)));
                    R(j, k) = r;
                    R(k, j) = r;
                }
            break;
    }
    return R;
}

Eigen::MatrixXd inverse_correlation(const WorkingCorrelation& corr,
                                    const Eigen::VectorXi& years) {
    const int n = static_cast<int>(years.size());
    require_valid(corr, n);
    if (n == 1 || corr.kind == CorrelationKind::independence) {
        return Eigen::MatrixXd::Identity(n, n);
    }
    if (corr.kind == CorrelationKind::exchangeable) {
        const double a = corr.alpha;
        const double c = a / (1.0 + (n - 1) * a);
        Eigen::MatrixXd inv = Eigen::MatrixXd::Constant(n, n, -c / (1.0 - a));
        inv.diagonal().array() += 1.0 / (1.0 - a);
        return inv;
    }
    // AR(1): the process is Markov in time, so the precision matrix is
    // tridiagonal even when year gaps are unequal. With r_j the correlation
    // between neighbours j and j+1, Q = B^T D^-1 B for the usual innovation
    // factorization.
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd r(n - 1);
    for (int j = 0; j + 1 < n; ++j) {
        r(j) = std::pow(corr.alpha, std::abs(years(j + 1) - years(j)));
    }
    for (int j = 0; j < n; ++j) {
        double d = (j == 0) ? 1.0 : 1.0 - r(j - 1) * r(j - 1);
        Q(j, j) += 1.0 / d;
        if (j + 1 < n) {
            const double dn = 1.0 - r(j) * r(j);
            Q(j, j) += r(j) * r(j) / dn;
            Q(j, j + 1) = -r(j) / dn;
            Q(j + 1, j) = -r(j) / dn;
        }
    }
    return Q;
}

}  // namespace panelgee
