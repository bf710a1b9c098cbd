#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <limits>

#include "sslface/container.hpp"
#include "sslface/error.hpp"
#include "test_util.hpp"

using namespace sslface;

namespace {

using Bytes = std::vector<std::uint8_t>;

LoadError::Reason reason_of(const Bytes& b) {
  try {
    ContainerReader::parse(b);
  } catch (const LoadError& e) {
    return e.reason();
  }
  FAIL("parse succeeded");
  return LoadError::Reason::kIo;
}

void reseal(Bytes& b) {
  b.resize(b.size() - 4);
  const auto crc = crc32_of(b);
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
}

Bytes sample(nlohmann::json* header = nullptr) {
  ContainerWriter w;
  const std::vector<double> xs = {1.5, -0.0, std::numeric_limits<double>::denorm_min(), 1e308, M_PI};
  nlohmann::json h;
  h["kind"] = "test";
  h["xs"] = w.add_array(xs);
  h["one"] = w.add_value(42.0);
  if (header) *header = h;
  return w.serialize(h);
}

}  // namespace

TEST_CASE("crc32 check value") {
  const std::string s = "123456789";
  CHECK(crc32_of(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())) == 0xCBF43926u);
}

TEST_CASE("layout and round-trip") {
  const auto b = sample();
  CHECK(std::memcmp(b.data(), "SSLF", 4) == 0);
  CHECK(b[4] == kContainerVersion);
  CHECK(b[5] == 0);
  const auto r = ContainerReader::parse(b);
  CHECK(r.version() == kContainerVersion);
  CHECK(r.header()["kind"] == "test");
  const auto xs = r.array(r.header()["xs"]);
  REQUIRE(xs.size() == 5);
  CHECK(xs[0] == 1.5);
  CHECK(std::signbit(xs[1]));
  CHECK(xs[2] == std::numeric_limits<double>::denorm_min());
  CHECK(xs[4] == M_PI);
  CHECK(r.value(r.header()["one"]) == 42.0);
  CHECK_THROWS_AS(r.value(r.header()["xs"]), LoadError);
  CHECK_THROWS_AS(r.array(nlohmann::json{{"offset", 4}, {"count", 3}}), LoadError);
  CHECK_THROWS_AS(r.array(nlohmann::json{{"offset", "x"}}), LoadError);
}

TEST_CASE("file round-trip") {
  testutil::TempDir tmp("sslf_container");
  nlohmann::json h;
  const auto bytes = sample(&h);
  ContainerWriter w;
  w.add_array(std::vector<double>{1.5, -0.0, std::numeric_limits<double>::denorm_min(), 1e308, M_PI});
  w.add_value(42.0);
  w.write(tmp.path / "m.sslf", h);
  const auto r = ContainerReader::read(tmp.path / "m.sslf");
  CHECK(r.array(h["xs"]) == ContainerReader::parse(bytes).array(h["xs"]));
  try {
    ContainerReader::read(tmp.path / "none.sslf");
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(e.reason() == LoadError::Reason::kIo);
  }
}

TEST_CASE("corruption is detected") {
  const auto good = sample();
  for (std::size_t pos : {std::size_t{12}, good.size() / 2, good.size() - 10}) {
    auto b = good;
    b[pos] ^= 0x01;
    CHECK(reason_of(b) == LoadError::Reason::kChecksum);
  }
}

TEST_CASE("bad magic and version") {
  auto b = sample();
  b[0] = 'X';
  CHECK(reason_of(b) == LoadError::Reason::kMagic);
  CHECK(reason_of({}) == LoadError::Reason::kMagic);

  b = sample();
  b[4] = kContainerVersion + 1;
  reseal(b);
  CHECK(reason_of(b) == LoadError::Reason::kVersion);
  b[4] = 0;
  reseal(b);
  CHECK(reason_of(b) == LoadError::Reason::kVersion);
}

TEST_CASE("truncation") {
  const auto good = sample();
  for (std::size_t keep : {std::size_t{5}, std::size_t{9}, good.size() / 2, good.size() - 1}) {
    const Bytes b(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(keep));
    const auto r = reason_of(b);
    CHECK((r == LoadError::Reason::kTruncated || r == LoadError::Reason::kChecksum));
  }
  // drop one payload real but keep a valid checksum
  auto b = good;
  b.erase(b.end() - 12, b.end() - 4);
  reseal(b);
  CHECK(reason_of(b) == LoadError::Reason::kTruncated);
}

TEST_CASE("header that is not JSON") {
  auto b = sample();
  b[10] = '{';
  b[11] = '{';
  reseal(b);
  CHECK(reason_of(b) == LoadError::Reason::kFormat);
}
