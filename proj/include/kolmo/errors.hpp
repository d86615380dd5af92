#pragma once

#include <stdexcept>
#include <string>

namespace kolmo {

// Base class for all library failures.
struct error : std::runtime_error {
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

// Bad call-site input (non-positive time, empty grid, ...).
struct argument_error : error {
    explicit argument_error(const std::string& what) : error(what) {}
};

// Coefficient evaluation produced a non-finite value.
struct model_eval_error : error {
    explicit model_eval_error(const std::string& what) : error(what) {}
};

// A covariance factorization lost positive definiteness.
struct conditioning_error : error {
    explicit conditioning_error(const std::string& what) : error(what) {}
};

// A quadrature diverged or failed its self-consistency check.
struct quadrature_error : error {
    explicit quadrature_error(const std::string& what) : error(what) {}
};

// Experiment configuration is malformed or incomplete.
struct config_error : error {
    explicit config_error(const std::string& what) : error(what) {}
};

// Requested feature outside the supported envelope (derivative order, base
// distribution without a tabulated density, ...).
struct unsupported_error : error {
    explicit unsupported_error(const std::string& what) : error(what) {}
};

} // namespace kolmo
