#pragma once

#include "pvd/fields.hpp"
#include "pvd/optim.hpp"

namespace pvd {

/// Small instance of each representation, sized so a full finite-difference sweep is cheap.
FieldConfig gradcheck_field_config(Arch arch);

/// Compares the hand-written gradient of a rendered-pixel squared error (a handful of rays
/// through a small field, evaluated in double precision) against central differences.
GradCheckReport gradcheck_field(Arch arch, std::uint64_t seed, std::size_t n_params = 128, double eps = 1e-5);

/// Same harness on sum((p - c)^2 * k); its central differences are exact up to rounding.
GradCheckReport gradcheck_quadratic(std::uint64_t seed, std::size_t n = 64);

}  // namespace pvd
