#include "sslface/image.hpp"

namespace sslface {

RgbImage flip_horizontal(const RgbImage& img) {
  RgbImage out(img.width, img.height);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      for (int ch = 0; ch < 3; ++ch) out.at(r, img.width - 1 - c, ch) = img.at(r, c, ch);
    }
  }
  return out;
}

}  // namespace sslface
