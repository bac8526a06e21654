#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>

namespace panelgee {

enum class CorrelationKind { independence, exchangeable, ar1 };

const char* correlation_name(CorrelationKind kind);
CorrelationKind parse_correlation(const std::string& name);

// Working correlation R(alpha) for one cluster. AR(1) decays with the actual
// calendar-year gap between observations, not the index gap, so clusters with
// missing survey years keep the right temporal distance.
struct WorkingCorrelation {
    CorrelationKind kind = CorrelationKind::independence;
    double alpha = 0.0;
};

// Validity interval for alpha given the largest cluster size. Exchangeable
// requires alpha in (-1/(n_max-1), 1) for positive definiteness; AR(1) needs
// (-1, 1); independence has no parameter.
std::pair<double, double> alpha_bounds(CorrelationKind kind, int n_max);

bool alpha_valid(CorrelationKind kind, double alpha, int n_max);

Eigen::MatrixXd correlation_matrix(const WorkingCorrelation& corr,
                                   const Eigen::VectorXi& years);

// Exact inverse. Exchangeable uses the rank-one closed form
// (1/(1-a)) * (I - a/(1+(n-1)a) * J); AR(1) uses the tridiagonal Markov
// precision (exact for arbitrary year gaps); independence is the identity.
Eigen::MatrixXd inverse_correlation(const WorkingCorrelation& corr,
                                    const Eigen::VectorXi& years);

}  // namespace panelgee
