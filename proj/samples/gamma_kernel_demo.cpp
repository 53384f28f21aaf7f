// Discretize a Gamma kernel, simulate one lifted path and print the
// reconstruction error and the terminal value.

#include <cstdio>
#include <memory>

#include "svlift/svlift.hpp"

int main() {
  using namespace svlift;
  const Kernel k = Kernel::gamma(0.7, 1.0);
  for (std::size_t n : {10, 30, 100})
    std::printf("n = %3zu  L2 error on (0,1) = %.3e\n", n, kernel_l2_error(k, discretize(k, n), 1.0));

  auto dm = std::make_shared<const DiscreteMeasure>(discretize(k, 50));
  CoefficientSpec cs;
  cs.b0 = 0.1;
  cs.b1 = -0.3;
  cs.s0 = 1.0;
  cs.s1 = 0.2;
  cs.shape = DiffusionShape::tanh;
  const auto co = make_coefficients(cs);
  SimConfig sim;
  sim.T = 1.0;
  sim.dt = 1e-3;
  const auto path = simulate_lift(co, LiftState::zero(dm, 1), sim);
  std::printf("X(T) = %.6f, ||Y_T||_H = %.6f\n", path.x(path.x.rows() - 1, 0), norms(path.lift.back()).h_norm);
}
