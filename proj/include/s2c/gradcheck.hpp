#pragma once

#include <string>
#include <vector>

#include "s2c/nn.hpp"

namespace s2c {

struct GradcheckSpec {
  int levels = 2;
  int base_channels = 4;
  int in_channels = 4;
  int size = 8;
  int batch = 1;
  nn::GradCheckOptions options;
};

struct GradcheckCase {
  std::string name;
  nn::GradCheckReport report;
};

/// Finite-difference checks of every differentiable op, then the full
/// refiner (both stages, with points) on random data.
std::vector<GradcheckCase> gradcheck_suite(const GradcheckSpec& spec);

}  // namespace s2c
