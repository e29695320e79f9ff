#include "hssdct/rng.hpp"

#include <cmath>
#include <numbers>

namespace hssdct {

double Rng::normal() noexcept {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace hssdct
