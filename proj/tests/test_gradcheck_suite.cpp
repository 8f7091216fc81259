#include <doctest.h>

#include "fxf/gradcheck_suite.hpp"

using namespace fxf;

TEST_CASE("gradient check suite passes at toy dims") {
  const auto results = run_gradcheck_suite();
  REQUIRE(results.size() == 7);
  CHECK(results.front().module == "ops");
  CHECK(results.back().module == "model");
  for (const auto& r : results) {
    INFO(r.module << " worst " << r.worst);
    MESSAGE(r.module << " " << r.seconds << " s, worst " << r.worst);
    CHECK(r.passed);
    CHECK(r.checked > 0);
    for (const auto& e : r.entries) {
      INFO(e.name);
      CHECK(e.worst_rel_error < 1e-4);
    }
  }
}
