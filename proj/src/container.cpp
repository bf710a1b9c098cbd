#include "sslface/container.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sslface/error.hpp"

namespace sslface {
namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  if (pos + sizeof(U) > bytes.size()) throw LoadError(LoadError::Reason::kTruncated, "model file is truncated");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes[pos + i]) << (8 * i);
  pos += sizeof(U);
  return std::bit_cast<T>(bits);
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

nlohmann::json ContainerWriter::add_array(std::span<const double> values) {
  nlohmann::json ref = {{"offset", payload_.size()}, {"count", values.size()}};
  payload_.insert(payload_.end(), values.begin(), values.end());
  return ref;
}

std::vector<std::uint8_t> ContainerWriter::serialize(const nlohmann::json& header) const {
  const std::string text = header.dump();
  std::vector<std::uint8_t> out = {'S', 'S', 'L', 'F'};
  put_le<std::uint16_t>(out, kContainerVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  put_le<std::uint64_t>(out, payload_.size());
  out.reserve(out.size() + 8 * payload_.size() + 4);
  for (double v : payload_) put_le<double>(out, v);
  put_le<std::uint32_t>(out, crc32_of(out));
  return out;
}

void ContainerWriter::write(const std::filesystem::path& path, const nlohmann::json& header) const {
  const auto bytes = serialize(header);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

ContainerReader ContainerReader::parse(std::span<const std::uint8_t> bytes) {
  using R = LoadError::Reason;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "SSLF", 4) != 0) throw LoadError(R::kMagic, "not an SSLF model file");
  std::size_t pos = 4;
  ContainerReader reader;
  reader.version_ = get_le<std::uint16_t>(bytes, pos);
  if (reader.version_ > kContainerVersion) {
    throw LoadError(R::kVersion, "model format version " + std::to_string(reader.version_) +
                                     " is newer than supported version " + std::to_string(kContainerVersion));
  }
  if (reader.version_ == 0) throw LoadError(R::kVersion, "invalid model format version 0");
  if (bytes.size() < pos + 4) throw LoadError(R::kTruncated, "model file is truncated");
  const std::uint32_t stored_crc = [&] {
    std::size_t tail = bytes.size() - 4;
    return get_le<std::uint32_t>(bytes, tail);
  }();
  if (crc32_of(bytes.first(bytes.size() - 4)) != stored_crc) {
    throw LoadError(R::kChecksum, "model file checksum mismatch (corrupted or truncated)");
  }
  const auto body = bytes.first(bytes.size() - 4);
  const auto header_len = get_le<std::uint32_t>(body, pos);
  if (pos + header_len > body.size()) throw LoadError(R::kTruncated, "model header is truncated");
  try {
    reader.header_ = nlohmann::json::parse(body.begin() + static_cast<std::ptrdiff_t>(pos),
                                           body.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(R::kFormat, std::string("model header is not valid JSON: ") + e.what());
  }
  pos += header_len;
  const auto count = get_le<std::uint64_t>(body, pos);
  if (count > (body.size() - pos) / 8 || pos + 8 * count != body.size()) {
    throw LoadError(R::kTruncated, "model payload size does not match its declared length");
  }
  reader.payload_.resize(count);
  for (auto& v : reader.payload_) v = get_le<double>(body, pos);
  return reader;
}

ContainerReader ContainerReader::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadError::Reason::kIo, "cannot open model file " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse(bytes);
}

std::vector<double> ContainerReader::array(const nlohmann::json& ref) const {
  try {
    const auto offset = ref.at("offset").get<std::size_t>();
    const auto count = ref.at("count").get<std::size_t>();
    if (offset > payload_.size() || count > payload_.size() - offset) {
      throw LoadError(LoadError::Reason::kFormat, "array reference outside payload");
    }
    return {payload_.begin() + static_cast<std::ptrdiff_t>(offset),
            payload_.begin() + static_cast<std::ptrdiff_t>(offset + count)};
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadError::Reason::kFormat, std::string("bad array reference: ") + e.what());
  }
}

double ContainerReader::value(const nlohmann::json& ref) const {
  const auto v = array(ref);
  if (v.size() != 1) throw LoadError(LoadError::Reason::kFormat, "expected a scalar entry");
  return v[0];
}

}  // namespace sslface
