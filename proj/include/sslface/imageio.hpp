#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sslface/image.hpp"

namespace sslface {

// PNG and binary Netpbm (P5 grayscale, P6 color). Grayscale inputs are
// expanded to RGB with R = G = B.

RgbImage read_image(const std::filesystem::path& path);
RgbImage decode_image(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_png(const RgbImage& img);
void write_png(const std::filesystem::path& path, const RgbImage& img);
void write_ppm(const std::filesystem::path& path, const RgbImage& img);
/// Writes the R channel as 8-bit gray.
void write_pgm(const std::filesystem::path& path, const RgbImage& img);

}  // namespace sslface
