#pragma once

#include "hrac/gradcheck.hpp"

namespace hrac_test {
using hrac::gradcheck::check_input_gradient;
using hrac::gradcheck::check_parameter_gradients;
using hrac::gradcheck::relative_error;
}  // namespace hrac_test
