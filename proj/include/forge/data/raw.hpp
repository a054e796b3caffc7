#pragma once

// Little-endian encoding of flat numeric arrays.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "forge/core/error.hpp"
#include "forge/data/archive.hpp"

namespace forge {

namespace detail {

template <typename U>
U byteswap_if_big(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r = static_cast<U>((r << 8) | ((v >> (8 * i)) & 0xFF));
    return r;
  } else {
    return v;
  }
}

template <typename V, typename U>
Bytes encode_le(const std::vector<V>& values) {
  static_assert(sizeof(V) == sizeof(U));
  Bytes out(values.size() * sizeof(V));
  for (std::size_t i = 0; i < values.size(); ++i) {
    U bits;
    std::memcpy(&bits, &values[i], sizeof(U));
    bits = byteswap_if_big(bits);
    std::memcpy(out.data() + i * sizeof(U), &bits, sizeof(U));
  }
  return out;
}

template <typename V, typename U>
std::vector<V> decode_le(const Bytes& raw, std::size_t expected, const std::string& what) {
  if (raw.size() != expected * sizeof(V)) {
    throw FormatError(what + ": expected " + std::to_string(expected * sizeof(V)) + " bytes, found " +
                      std::to_string(raw.size()));
  }
  std::vector<V> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    U bits;
    std::memcpy(&bits, raw.data() + i * sizeof(U), sizeof(U));
    bits = byteswap_if_big(bits);
    std::memcpy(&out[i], &bits, sizeof(U));
  }
  return out;
}

}  // namespace detail

inline Bytes encode_f32(const std::vector<float>& v) { return detail::encode_le<float, std::uint32_t>(v); }
inline Bytes encode_u16(const std::vector<std::uint16_t>& v) { return detail::encode_le<std::uint16_t, std::uint16_t>(v); }

inline std::vector<float> decode_f32(const Bytes& raw, std::size_t n, const std::string& what) {
  return detail::decode_le<float, std::uint32_t>(raw, n, what);
}
inline std::vector<std::uint16_t> decode_u16(const Bytes& raw, std::size_t n, const std::string& what) {
  return detail::decode_le<std::uint16_t, std::uint16_t>(raw, n, what);
}

}  // namespace forge
