#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "narxsel/csv.hpp"
#include "narxsel/error.hpp"

using namespace narxsel;

namespace {

std::string error_text(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::parse);
    return e.what();
  }
  FAIL("expected a parse error");
  return {};
}

}  // namespace

TEST_CASE("format_double round-trips exactly") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> mantissa(-1.0, 1.0);
  std::uniform_int_distribution<int> exponent(-300, 300);
  for (int i = 0; i < 2000; ++i) {
    const double x = std::ldexp(mantissa(rng), exponent(rng));
    CHECK(parse_double(format_double(x)) == x);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK(std::isnan(parse_double(format_double(std::numeric_limits<double>::quiet_NaN()))));
  CHECK(parse_double(format_double(-0.0)) == 0.0);
}

TEST_CASE("parse_double rejects junk") {
  error_text([] { parse_double("1.5x"); });
  error_text([] { parse_double(""); });
}

TEST_CASE("series CSV round-trip") {
  TimeSeriesPair pair{{0.1, -2.25, 1e-300}, {3.0, 1.0 / 3.0, -7.5}};
  std::stringstream ss;
  write_series_csv(ss, pair);
  CHECK(ss.str().rfind("t,u,y\n", 0) == 0);
  const auto back = read_series_csv(ss);
  CHECK(back.u == pair.u);
  CHECK(back.y == pair.y);
}

TEST_CASE("lagged CSV round-trip") {
  TimeSeriesPair pair;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int t = 0; t < 40; ++t) {
    pair.u.push_back(n(rng));
    pair.y.push_back(n(rng));
  }
  const auto ds = build_lagged(pair, 10);
  std::stringstream ss;
  write_lagged_csv(ss, ds);
  std::string header;
  std::getline(std::stringstream(ss.str()), header);
  CHECK(header.rfind("u_lag10,u_lag9", 0) == 0);
  CHECK(header.find("y_lag1,target") != std::string::npos);
  const auto back = read_lagged_csv(ss);
  CHECK(back.X == ds.X);
  CHECK(back.targets == ds.targets);
  CHECK(back.labels == ds.labels);
  CHECK(back.lag == 10);
}

TEST_CASE("CSV errors name the row and column") {
  std::istringstream missing("t,u\n0,1\n");
  const auto msg1 = error_text([&] { read_series_csv(missing); });
  CHECK(msg1.find("'y'") != std::string::npos);

  std::istringstream bad("t,u,y\n0,1,2\n1,abc,3\n");
  const auto msg2 = error_text([&] { read_series_csv(bad); });
  CHECK(msg2.find("row 3") != std::string::npos);
  CHECK(msg2.find("'u'") != std::string::npos);

  std::istringstream short_row("t,u,y\n0,1\n");
  const auto msg3 = error_text([&] { read_series_csv(short_row); });
  CHECK(msg3.find("row 2") != std::string::npos);

  std::istringstream empty("");
  error_text([&] { read_csv(empty); });
}

TEST_CASE("CSV reader tolerates CRLF and blank lines") {
  std::istringstream in("t,u,y\r\n\r\n0, 1.5 ,2\r\n");
  const auto pair = read_series_csv(in);
  REQUIRE(pair.size() == 1);
  CHECK(pair.u[0] == 1.5);
  CHECK(pair.y[0] == 2.0);
}
