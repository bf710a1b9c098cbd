#pragma once

#include "sslface/image.hpp"

namespace sslface {

/// Bilinear resampling with pixel-center alignment:
/// source coordinate = (dst + 0.5) * src_size / dst_size - 0.5, clamped to the
/// image. Same-size resizes are exact copies.
RgbImage resize_bilinear(const RgbImage& img, int out_w, int out_h);

/// Largest centered square crop.
RgbImage center_crop_square(const RgbImage& img);

/// Degrade to `low` x `low` and resize back to the original size.
RgbImage simulate_low_resolution(const RgbImage& img, int low);

struct YCrCbPlanes {
  ImageTensor y;     // 1 channel
  ImageTensor crcb;  // 2 channels, order (Cr, Cb)
};

/// BT.601 full-range conversion, chroma offset 128, values clamped to [0, 255].
YCrCbPlanes to_ycbcr(const RgbImage& img);

/// Classic 256-bin CDF remap. Values are binned by rounding. A single-level
/// image is returned unchanged.
ImageTensor hist_equalize(const ImageTensor& y);

struct FacePlanes {
  ImageTensor y;
  ImageTensor crcb;
};

struct PreprocessOptions {
  int size = 32;
  /// 0 disables; otherwise downsample to this size and upsample back.
  int low_resolution = 0;
  bool equalize = true;
};

/// Full face normalization: resize, optional low-resolution simulation,
/// color split and histogram equalization of Y.
FacePlanes preprocess_face(const RgbImage& img, const PreprocessOptions& opts = {});

/// The RGB image the planes are derived from (resized, degraded).
RgbImage normalized_rgb(const RgbImage& img, const PreprocessOptions& opts = {});

}  // namespace sslface
