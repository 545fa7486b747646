#include <stdexcept>

#include "doctest.h"
#include "trifield/gradcheck.hpp"

using namespace trifield;

TEST_CASE("every adjoint matches central finite differences") {
    auto results = gradcheck::run("all", 7, 100);
    auto names = gradcheck::module_names();
    REQUIRE(results.size() == names.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
        INFO(results[i].name);
        CHECK(results[i].name == names[i]);
        CHECK(results[i].instances >= 100);
        CHECK(results[i].max_rel_err <= 1e-4);
        CHECK(results[i].max_rel_err > 0.0);  // probes actually executed
    }
}

TEST_CASE("single module selection and errors") {
    auto one = gradcheck::run("pose", 3, 10);
    REQUIRE(one.size() == 1);
    CHECK(one[0].name == "pose");
    CHECK(one[0].instances == 10);

    CHECK_THROWS_AS(gradcheck::run("warp", 3), std::invalid_argument);
    CHECK_THROWS_AS(gradcheck::run("all", 3, 0), std::invalid_argument);
}

TEST_CASE("checks are deterministic for a fixed seed") {
    auto a = gradcheck::run("compositor", 11, 20);
    auto b = gradcheck::run("compositor", 11, 20);
    REQUIRE(a.size() == 1);
    CHECK(a[0].max_rel_err == b[0].max_rel_err);
}
