#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace pwacert::plant::detail {

using RhsFn = std::function<void(const double* x, double* dxdt)>;
/// Row-major n x n Jacobian.
using JacFn = std::function<void(const double* x, double* jac)>;

/// Adaptive Rosenbrock integration of dx/dt = f(x) over [0, dt] in place.
/// Returns the number of accepted inner steps; throws std::runtime_error on
/// stepper failure.
std::size_t rosenbrock_integrate(std::vector<double>& x, double dt, double tol, const RhsFn& f, const JacFn& jac);

}  // namespace pwacert::plant::detail
