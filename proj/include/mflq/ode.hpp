#pragma once

// Fixed-step classical Runge-Kutta. A negative step integrates backward.

namespace mflq {

template <class State, class Rhs>
State rk4_step(const State& y, double s, double h, Rhs&& f) {
  const State k1 = f(s, y);
  const State k2 = f(s + 0.5 * h, State(y + (0.5 * h) * k1));
  const State k3 = f(s + 0.5 * h, State(y + (0.5 * h) * k2));
  const State k4 = f(s + h, State(y + h * k3));
  return State(y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

}  // namespace mflq
