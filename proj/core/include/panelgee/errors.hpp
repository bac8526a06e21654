#pragma once

#include <stdexcept>
#include <string>

namespace panelgee {

// I/O, schema, and usage failures (CLI exit 2).
struct EnvironmentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Analysis findings: bad data, rank deficiency, degenerate fits (CLI exit 1).
struct AnalysisError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace panelgee
