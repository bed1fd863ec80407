#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace bfe {

/// Violation of a call contract (bad policy entry, missing tail, size mismatch).
class contract_error : public std::logic_error {
public:
    explicit contract_error(const std::string& what) : std::logic_error(what) {}
};

/// An iterative solver hit its iteration cap before reaching tolerance.
class convergence_error : public std::runtime_error {
public:
    convergence_error(const std::string& what, double last_residual, int iterations)
        : std::runtime_error(what), residual(last_residual), iterations(iterations) {}
    double residual;
    int iterations;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw contract_error(msg);
}

inline void require_arg(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace bfe
