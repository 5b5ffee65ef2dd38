// Built as C++17: the uBLAS storage in this Boost release uses allocator
// members removed in C++20.
#include "internal/stiff_integrator.hpp"

#include <boost/numeric/odeint.hpp>

namespace pwacert::plant::detail {

namespace odeint = boost::numeric::odeint;
using UVec = boost::numeric::ublas::vector<double>;
using UMat = boost::numeric::ublas::matrix<double>;

std::size_t rosenbrock_integrate(std::vector<double>& x, double dt, double tol, const RhsFn& f, const JacFn& jac) {
  const std::size_t n = x.size();
  UVec state(n);
  std::copy(x.begin(), x.end(), state.begin());
  std::vector<double> jbuf(n * n);
  auto sys = [&](const UVec& s, UVec& dxdt, double) { f(&s.data()[0], &dxdt.data()[0]); };
  auto jsys = [&](const UVec& s, UMat& J, double, UVec& dfdt) {
    jac(&s.data()[0], jbuf.data());
    for (std::size_t i = 0; i < n; ++i) {
      dfdt[i] = 0.0;
      for (std::size_t j = 0; j < n; ++j) J(i, j) = jbuf[i * n + j];
    }
  };
  auto stepper = odeint::make_controlled<odeint::rosenbrock4<double>>(tol, tol);
  const std::size_t steps = odeint::integrate_adaptive(stepper, std::make_pair(sys, jsys), state, 0.0, dt, dt / 10);
  std::copy(state.begin(), state.end(), x.begin());
  return steps;
}

}  // namespace pwacert::plant::detail
