#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace sslface {

/// 8-bit RGB image, row-major, interleaved R,G,B.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

  bool empty() const noexcept { return width <= 0 || height <= 0 || data.empty(); }

  std::uint8_t& at(int row, int col, int ch) {
    return data[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
  }
  std::uint8_t at(int row, int col, int ch) const {
    return data[(static_cast<std::size_t>(row) * width + col) * 3 + ch];
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// H x W x C real-valued tensor, row-major with channels last.
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;

  ImageTensor() = default;
  ImageTensor(int h, int w, int c)
      : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c, 0.0) {}

  std::size_t index(int row, int col, int ch) const noexcept {
    return (static_cast<std::size_t>(row) * width + col) * channels + ch;
  }
  double& at(int row, int col, int ch = 0) { return values[index(row, col, ch)]; }
  double at(int row, int col, int ch = 0) const { return values[index(row, col, ch)]; }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

/// Mirror an image left-right: pixel (r, c) moves to (r, W-1-c).
RgbImage flip_horizontal(const RgbImage& img);

}  // namespace sslface
