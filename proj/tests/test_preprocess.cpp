#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "oracles.hpp"
#include "sslface/error.hpp"
#include "sslface/preprocess.hpp"

using namespace sslface;

namespace {

RgbImage random_rgb(int w, int h, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  RgbImage img(w, h);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(gen() & 0xff);
  return img;
}

ImageTensor gray(std::vector<double> v, int h, int w) {
  ImageTensor t(h, w, 1);
  t.values = std::move(v);
  return t;
}

}  // namespace

TEST_CASE("same-size resize is an exact copy") {
  const auto img = random_rgb(32, 32, 1);
  CHECK(resize_bilinear(img, 32, 32) == img);
}

TEST_CASE("constant image stays constant when upsampled") {
  RgbImage img(2, 2);
  std::fill(img.data.begin(), img.data.end(), 100);
  const auto out = resize_bilinear(img, 4, 4);
  for (auto v : out.data) CHECK(v == 100);
}

TEST_CASE("downsampled gradient matches the bilinear formula at probe pixels") {
  RgbImage img(64, 64);
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 64; ++c) {
      img.at(r, c, 0) = static_cast<std::uint8_t>(4 * c);
      img.at(r, c, 1) = static_cast<std::uint8_t>(4 * r);
      img.at(r, c, 2) = static_cast<std::uint8_t>((r * r + 3 * c) % 256);
    }
  }
  const auto out = resize_bilinear(img, 32, 32);
  const int probes[5][2] = {{0, 0}, {31, 31}, {7, 19}, {16, 3}, {25, 30}};
  for (const auto& p : probes) {
    for (int ch = 0; ch < 3; ++ch) CHECK(out.at(p[0], p[1], ch) == oracle::bilinear(img, 32, 32, p[0], p[1], ch));
  }
  CHECK(out.at(5, 9, 0) == 8 * 9 + 2);
}

TEST_CASE("upsampling agrees with the formula everywhere") {
  const auto img = random_rgb(7, 5, 2);
  const auto out = resize_bilinear(img, 16, 11);
  for (int r = 0; r < 11; ++r) {
    for (int c = 0; c < 16; ++c) {
      for (int ch = 0; ch < 3; ++ch) CHECK(out.at(r, c, ch) == oracle::bilinear(img, 16, 11, r, c, ch));
    }
  }
}

TEST_CASE("empty image is rejected") {
  CHECK_THROWS_AS(resize_bilinear(RgbImage{}, 4, 4), InvalidInput);
  CHECK_THROWS_AS(to_ycbcr(RgbImage{}), InvalidInput);
}

TEST_CASE("color conversion reference values") {
  RgbImage img(3, 1);
  const std::uint8_t px[3][3] = {{128, 128, 128}, {255, 255, 255}, {255, 0, 0}};
  for (int i = 0; i < 3; ++i) {
    for (int ch = 0; ch < 3; ++ch) img.at(0, i, ch) = px[i][ch];
  }
  const auto p = to_ycbcr(img);
  CHECK(p.y.at(0, 0) == doctest::Approx(128.0));
  CHECK(p.crcb.at(0, 0, 0) == doctest::Approx(128.0));
  CHECK(p.crcb.at(0, 0, 1) == doctest::Approx(128.0));
  CHECK(p.y.at(0, 1) == doctest::Approx(255.0));
  CHECK(p.crcb.at(0, 1, 0) == doctest::Approx(128.0));
  CHECK(p.y.at(0, 2) == doctest::Approx(76.245));
  CHECK(p.crcb.at(0, 2, 0) == 255.0);
  CHECK(p.crcb.at(0, 2, 1) == doctest::Approx(84.97232));
}

TEST_CASE("inverse conversion reconstructs RGB within one level") {
  const auto img = random_rgb(16, 16, 3);
  const auto p = to_ycbcr(img);
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 16; ++c) {
      const double y = p.y.at(r, c), cr = p.crcb.at(r, c, 0) - 128.0, cb = p.crcb.at(r, c, 1) - 128.0;
      const double rgb[3] = {y + 1.402 * cr, y - 0.344136 * cb - 0.714136 * cr, y + 1.772 * cb};
      for (int ch = 0; ch < 3; ++ch) CHECK(std::abs(rgb[ch] - img.at(r, c, ch)) <= 1.0);
    }
  }
}

TEST_CASE("histogram equalization") {
  SUBCASE("hand-computed 4-pixel example") {
    const auto out = hist_equalize(gray({52, 55, 61, 59}, 2, 2));
    CHECK(out.values == std::vector<double>{0, 85, 255, 170});
  }
  SUBCASE("half black, half white is unchanged") {
    const auto in = gray({0, 255, 0, 255, 0, 255}, 2, 3);
    CHECK(hist_equalize(in) == in);
  }
  SUBCASE("constant image is unchanged") {
    const auto in = gray(std::vector<double>(9, 77.0), 3, 3);
    CHECK(hist_equalize(in) == in);
  }
  SUBCASE("rank order is preserved, ties stay ties") {
    std::mt19937_64 gen(4);
    std::vector<double> v(256);
    for (auto& x : v) x = static_cast<double>(gen() % 60 + 100);
    const auto out = hist_equalize(gray(v, 16, 16));
    for (int i = 0; i < 256; ++i) {
      for (int j = 0; j < 256; ++j) {
        if (v[i] < v[j]) CHECK(out.values[i] <= out.values[j]);
        if (v[i] == v[j]) CHECK(out.values[i] == out.values[j]);
      }
    }
    CHECK(*std::max_element(out.values.begin(), out.values.end()) == 255.0);
    CHECK(*std::min_element(out.values.begin(), out.values.end()) == 0.0);
  }
}

TEST_CASE("face preprocessing") {
  const auto img = random_rgb(40, 48, 5);
  const auto f = preprocess_face(img);
  CHECK(f.y.height == 32);
  CHECK(f.y.channels == 1);
  CHECK(f.crcb.channels == 2);
  CHECK(preprocess_face(img).y == f.y);

  PreprocessOptions low;
  low.low_resolution = 16;
  const auto n = normalized_rgb(img, low);
  CHECK(n.width == 32);
  CHECK(n == resize_bilinear(resize_bilinear(resize_bilinear(img, 32, 32), 16, 16), 32, 32));
}

TEST_CASE("center crop and flip") {
  const auto img = random_rgb(10, 6, 6);
  const auto sq = center_crop_square(img);
  CHECK(sq.width == 6);
  CHECK(sq.at(0, 0, 1) == img.at(0, 2, 1));
  const auto f = flip_horizontal(img);
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 10; ++c) CHECK(f.at(r, c, 0) == img.at(r, 9 - c, 0));
  }
}
