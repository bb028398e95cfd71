#pragma once

#include <functional>

#include "qspike/matrix.hpp"

namespace qspike {

using ScalarFn = std::function<double(const Matrix&)>;

/// Central-difference gradient (f(x+h e_i) - f(x-h e_i)) / 2h for every
/// coordinate. Used as the independent oracle for analytic gradients.
Matrix finite_difference_grad(const ScalarFn& f, const Matrix& x, double h);

}  // namespace qspike
