#include "doctest.h"
#include "synthetic.hpp"

using dcnet::testsupport::SweepResult;
using dcnet::testsupport::gradient_sweep;

TEST_SUITE_BEGIN("gradients");

TEST_CASE("randomized finite-difference sweep, float") {
  SweepResult r = gradient_sweep<float>(1e-3, 1234, 2);
  INFO("worst ", r.worst, " at ", r.worst_case);
  CHECK(r.cases >= 20);
  CHECK(r.pass);
}

TEST_CASE("randomized finite-difference sweep, double") {
  SweepResult r = gradient_sweep<double>(1e-6, 4321, 2);
  INFO("worst ", r.worst, " at ", r.worst_case);
  CHECK(r.cases >= 20);
  CHECK(r.pass);
}

TEST_SUITE_END();
