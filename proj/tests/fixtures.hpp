#pragma once

#include "semiq/system.hpp"

namespace semiq::testing {

// n=m=1, f=0, g=1, eps=x^2, Q=1. Closed forms: V(x)=x^2, K=-1,
// B(x)=x^2-delta with delta=0.04.
inline SystemSpec sys_a() { return SystemSpec(1, 1, {"0"}, {{"1"}}, "x1^2", {{"1"}}); }

// n=m=1, f=x, g=1, eps=x^2, Q=1. V(x)=(1+sqrt 2)x^2, K=-(1+sqrt 2).
inline SystemSpec sys_b() { return SystemSpec(1, 1, {"x1"}, {{"1"}}, "x1^2", {{"1"}}); }

// pendulum, n=2, m=1: f=(x2, sin x1), g=(0,1)^T, eps=|x|^2, Q=1.
inline SystemSpec sys_c() {
  return SystemSpec(2, 1, {"x2", "sin(x1)"}, {{"0"}, {"1"}}, "x1^2+x2^2", {{"1"}});
}

// 2-D controllable linear fixture (double integrator), quadratic eps, constant Q.
inline SystemSpec sys_lin2() {
  return SystemSpec(2, 1, {"x2", "0"}, {{"0"}, {"1"}}, "x1^2+x2^2", {{"1"}});
}

// radially symmetric: f=0, g=I, eps=|x|^2, Q=I (n=m=2); rays never cross.
inline SystemSpec sys_radial() {
  return SystemSpec(2, 2, {"0", "0"}, {{"1", "0"}, {"0", "1"}}, "x1^2+x2^2",
                    {{"1", "0"}, {"1"}});
}

// general 1-D fixture for the quadrature oracle: f = x - x^3.
inline SystemSpec sys_cubic() {
  return SystemSpec(1, 1, {"x1 - x1^3"}, {{"1"}}, "x1^2", {{"1"}});
}

}  // namespace semiq::testing
