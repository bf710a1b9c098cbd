#include "sslface/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "sslface/error.hpp"

namespace sslface {
namespace {

double clamp255(double v) { return std::clamp(v, 0.0, 255.0); }

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(clamp255(v))); }

}  // namespace

RgbImage resize_bilinear(const RgbImage& img, int out_w, int out_h) {
  if (img.empty()) throw InvalidInput("resize_bilinear: empty input image");
  if (out_w < 1 || out_h < 1) throw InvalidInput("resize_bilinear: target size must be >= 1");
  if (out_w == img.width && out_h == img.height) return img;

  const double sx_scale = static_cast<double>(img.width) / out_w;
  const double sy_scale = static_cast<double>(img.height) / out_h;
  RgbImage out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const double sy = std::clamp((y + 0.5) * sy_scale - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fy = sy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double sx = std::clamp((x + 0.5) * sx_scale - 0.5, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double fx = sx - x0;
      for (int ch = 0; ch < 3; ++ch) {
        const double top = (1.0 - fx) * img.at(y0, x0, ch) + fx * img.at(y0, x1, ch);
        const double bottom = (1.0 - fx) * img.at(y1, x0, ch) + fx * img.at(y1, x1, ch);
        out.at(y, x, ch) = to_byte((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

RgbImage center_crop_square(const RgbImage& img) {
  if (img.empty()) throw InvalidInput("center_crop_square: empty input image");
  const int side = std::min(img.width, img.height);
  const int r0 = (img.height - side) / 2;
  const int c0 = (img.width - side) / 2;
  RgbImage out(side, side);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = img.at(r0 + r, c0 + c, ch);
    }
  }
  return out;
}

RgbImage simulate_low_resolution(const RgbImage& img, int low) {
  return resize_bilinear(resize_bilinear(img, low, low), img.width, img.height);
}

YCrCbPlanes to_ycbcr(const RgbImage& img) {
  if (img.empty()) throw InvalidInput("to_ycbcr: empty input image");
  YCrCbPlanes planes{ImageTensor(img.height, img.width, 1), ImageTensor(img.height, img.width, 2)};
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const double red = img.at(r, c, 0);
      const double green = img.at(r, c, 1);
      const double blue = img.at(r, c, 2);
      planes.y.at(r, c) = clamp255(0.299 * red + 0.587 * green + 0.114 * blue);
      planes.crcb.at(r, c, 0) = clamp255(128.0 + 0.5 * red - 0.418688 * green - 0.081312 * blue);
      planes.crcb.at(r, c, 1) = clamp255(128.0 - 0.168736 * red - 0.331264 * green + 0.5 * blue);
    }
  }
  return planes;
}

ImageTensor hist_equalize(const ImageTensor& y) {
  if (y.channels != 1) throw InvalidInput("hist_equalize: expects a single channel");
  const std::size_t n = y.values.size();
  if (n == 0) return y;

  auto level_of = [](double v) { return static_cast<int>(std::lround(clamp255(v))); };
  std::array<std::size_t, 256> cdf{};
  for (double v : y.values) ++cdf[level_of(v)];
  std::size_t cdf_min = 0;
  for (std::size_t i = 0; i < 256; ++i) {
    if (cdf_min == 0) cdf_min = cdf[i];
    if (i > 0) cdf[i] += cdf[i - 1];
  }
  if (cdf_min == n) return y;

  const double denom = static_cast<double>(n - cdf_min);
  std::array<double, 256> remap{};
  for (std::size_t i = 0; i < 256; ++i) {
    const double num = cdf[i] >= cdf_min ? static_cast<double>(cdf[i] - cdf_min) : 0.0;
    remap[i] = std::round(num / denom * 255.0);
  }
  ImageTensor out = y;
  for (double& v : out.values) v = remap[level_of(v)];
  return out;
}

RgbImage normalized_rgb(const RgbImage& img, const PreprocessOptions& opts) {
  RgbImage face = resize_bilinear(img, opts.size, opts.size);
  if (opts.low_resolution > 0) face = simulate_low_resolution(face, opts.low_resolution);
  return face;
}

FacePlanes preprocess_face(const RgbImage& img, const PreprocessOptions& opts) {
  YCrCbPlanes planes = to_ycbcr(normalized_rgb(img, opts));
  if (opts.equalize) planes.y = hist_equalize(planes.y);
  return {std::move(planes.y), std::move(planes.crcb)};
}

}  // namespace sslface
