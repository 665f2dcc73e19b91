#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/config.hpp"
#include "core/expr.hpp"

using namespace ctalab;

TEST_CASE("expression parsing and evaluation") {
  Expr e = Expr::parse("sin(pi*y1)*sin(pi*y2) + 0.5*x1^2 - exp(-y1)/2");
  double x1 = 0.3, y1 = 0.7, y2 = 0.2;
  double expect = std::sin(M_PI * y1) * std::sin(M_PI * y2) + 0.5 * x1 * x1 - std::exp(-y1) / 2;
  CHECK(e.eval(x1, y1, y2) == doctest::Approx(expect).epsilon(1e-14));

  CHECK(Expr::parse("2^3^1").eval(0, 0, 0) == doctest::Approx(8.0));
  CHECK(Expr::parse("-y1^2").eval(0, 2, 0) == doctest::Approx(-4.0));
  CHECK(Expr::parse("tanh(0.5)").eval(0, 0, 0) == doctest::Approx(std::tanh(0.5)));
  CHECK(Expr::parse("1e-3 + 2.5E2").eval(0, 0, 0) == doctest::Approx(250.001));
}

TEST_CASE("expression parse errors carry context") {
  CHECK_THROWS_AS(Expr::parse("sin(x1"), Error);
  CHECK_THROWS_AS(Expr::parse("x1 + bogus"), Error);
  CHECK_THROWS_AS(Expr::parse("x1 + + *"), Error);
  CHECK_THROWS_AS(Expr::parse("log(x1)"), Error);
}

TEST_CASE("symbolic derivatives match central differences") {
  Expr e = Expr::parse("sin(pi*y1)*cos(2*y2) + tanh(y1*y2) + (1+0.1*x1)^3");
  Expr dx = e.derivative("x1");
  Expr d1 = e.derivative("y1");
  Expr d2 = e.derivative("y2");
  double h = 1e-5;
  for (double x1 : {0.1, 0.9}) {
    for (double y1 : {0.25, 0.6}) {
      for (double y2 : {0.15, 0.85}) {
        double fd_x = (e.eval(x1 + h, y1, y2) - e.eval(x1 - h, y1, y2)) / (2 * h);
        double fd_1 = (e.eval(x1, y1 + h, y2) - e.eval(x1, y1 - h, y2)) / (2 * h);
        double fd_2 = (e.eval(x1, y1, y2 + h) - e.eval(x1, y1, y2 - h)) / (2 * h);
        CHECK(dx.eval(x1, y1, y2) == doctest::Approx(fd_x).epsilon(1e-8));
        CHECK(d1.eval(x1, y1, y2) == doctest::Approx(fd_1).epsilon(1e-8));
        CHECK(d2.eval(x1, y1, y2) == doctest::Approx(fd_2).epsilon(1e-8));
      }
    }
  }
}

TEST_CASE("config parses nested blocks and reports line numbers") {
  const char* text = R"(
# experiment
geometry {
  chart = square
  epsilon = 0.05
  phi = sin(pi*y1)*sin(pi*y2)
}
sweeps {
  tau = dyadic:64:4
  lambda = linspace:-8:8:5
}
flag = true
)";
  Config c = Config::parse_string(text, "test.cfg");
  CHECK(c.get_string("geometry.chart") == "square");
  CHECK(c.get_double("geometry.epsilon") == doctest::Approx(0.05));
  CHECK(c.get_bool("flag"));
  auto tau = c.get_list("sweeps.tau");
  REQUIRE(tau.size() == 4);
  CHECK(tau[3] == doctest::Approx(512.0));
  auto lam = c.get_list("sweeps.lambda");
  REQUIRE(lam.size() == 5);
  CHECK(lam[0] == doctest::Approx(-8.0));
  CHECK(lam[4] == doctest::Approx(8.0));
  CHECK(c.get_double("missing", 3.5) == doctest::Approx(3.5));

  CHECK_THROWS_WITH_AS(Config::parse_string("a = 1\n}\n", "bad.cfg").has("a"),
                       doctest::Contains("bad.cfg:2"), Error);
  CHECK_THROWS_AS(Config::parse_string("block {\n a = 1\n", "bad.cfg"), Error);
  Config c2 = Config::parse_string("v = nope", "bad.cfg");
  CHECK_THROWS_WITH_AS(c2.get_double("v"), doctest::Contains("bad.cfg:1"), Error);
}

TEST_CASE("canonical form is stable") {
  Config a = Config::parse_string("b = 2\na = 1\n");
  Config b = Config::parse_string("a = 1\nb = 2\n");
  CHECK(a.canonical() == b.canonical());
}
