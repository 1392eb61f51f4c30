#pragma once

// Little-endian binary primitives for the checkpoint format.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace aan {

// Reader ran off the end of its stream.
class TruncatedInput : public std::runtime_error {
 public:
  explicit TruncatedInput(const std::string& what) : std::runtime_error(what) {}
};

class BinWriter {
 public:
  explicit BinWriter(std::ostream& os) : os_(os) {}

  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void bytes(const void* p, std::size_t n);
  void f32_array(const float* p, std::size_t n);

 private:
  std::ostream& os_;
};

class BinReader {
 public:
  explicit BinReader(std::istream& is) : is_(is) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  void bytes(void* p, std::size_t n);
  void f32_array(float* p, std::size_t n);
  void skip(std::size_t n);
  bool at_eof();

 private:
  std::istream& is_;
};

}  // namespace aan
