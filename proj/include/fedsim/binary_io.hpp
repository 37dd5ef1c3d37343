// Little-endian binary helpers used by checkpoint and shard containers.
#ifndef FEDSIM_BINARY_IO_HPP
#define FEDSIM_BINARY_IO_HPP

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "fedsim/numerics.hpp"

namespace fedsim {

class IoError : public Error {
 public:
  using Error::Error;
};

namespace binary {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> buf{};
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf.data(), buf.size());
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> buf{};
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf.data(), buf.size());
}

inline void put_i32(std::ostream& out, std::int32_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
}

inline void put_f64(std::ostream& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> buf{};
  if (!in.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
    throw IoError("unexpected end of binary stream");
  }
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

inline std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> buf{};
  if (!in.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
    throw IoError("unexpected end of binary stream");
  }
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

inline std::int32_t get_i32(std::istream& in) { return static_cast<std::int32_t>(get_u32(in)); }

inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

}  // namespace binary
}  // namespace fedsim

#endif  // FEDSIM_BINARY_IO_HPP
