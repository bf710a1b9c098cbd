#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace sslface {

/// `SSLF` model container.
///
///   bytes 0..3   magic "SSLF"
///   u16          format version
///   u32          header length in bytes
///   ...          UTF-8 JSON header
///   u64          number of payload reals
///   f64[]        payload, IEEE-754 binary64
///   u32          CRC-32 of every preceding byte
///
/// All integers and reals are little-endian. Arrays inside the header are
/// referenced as {"offset": o, "count": n} into the payload.
inline constexpr std::uint16_t kContainerVersion = 1;

class ContainerWriter {
 public:
  nlohmann::json add_array(std::span<const double> values);
  nlohmann::json add_value(double value) { return add_array(std::span<const double>(&value, 1)); }

  std::vector<std::uint8_t> serialize(const nlohmann::json& header) const;
  void write(const std::filesystem::path& path, const nlohmann::json& header) const;

 private:
  std::vector<double> payload_;
};

class ContainerReader {
 public:
  static ContainerReader parse(std::span<const std::uint8_t> bytes);
  static ContainerReader read(const std::filesystem::path& path);

  const nlohmann::json& header() const { return header_; }
  std::uint16_t version() const { return version_; }

  std::vector<double> array(const nlohmann::json& ref) const;
  double value(const nlohmann::json& ref) const;

 private:
  nlohmann::json header_;
  std::vector<double> payload_;
  std::uint16_t version_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace sslface
