#pragma once

#include <varpro/core.hpp>

namespace varpro {

/// g(x, t) = x^4/2 + t^2 - |t| x^2 with n = k = 1. Its projector t(x) = x^2/2
/// is smooth although g is not, and the reduced objective is x^4/4.
NuisanceObjective quartic_envelope_objective();

}  // namespace varpro
