#pragma once

// Finite-difference verification of the network derivative engine over
// randomly shaped nets. Shared by the unit tests and the acceptance suite.

#include <cstdint>

namespace diffcheck {

struct Result {
  int nets = 0;
  double jacobian = 0.0;        // worst relative error, central FD step 1e-6
  double hessian = 0.0;         // worst relative error, second-order FD step 1e-4
  double grad_mse = 0.0;        // weight gradient of an MSE loss
  double grad_nested = 0.0;     // weight gradient of a scalar built from Hessian entries
};

Result run(int nets, std::uint64_t seed);

}  // namespace diffcheck
