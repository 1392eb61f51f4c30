#include "aan/binio.hpp"

#include <cstring>
#include <istream>
#include <ostream>

namespace aan {

namespace {
// Serialize integers byte-by-byte so the file layout is little-endian
// regardless of host order.
template <class U>
void put_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i)
    buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  is.read(reinterpret_cast<char*>(buf), sizeof(U));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(U)))
    throw TruncatedInput("truncated input while reading integer");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}
}  // namespace

void BinWriter::u8(std::uint8_t v) { put_le(os_, v); }
void BinWriter::u16(std::uint16_t v) { put_le(os_, v); }
void BinWriter::u32(std::uint32_t v) { put_le(os_, v); }
void BinWriter::u64(std::uint64_t v) { put_le(os_, v); }

void BinWriter::f32(float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  u32(bits);
}

void BinWriter::bytes(const void* p, std::size_t n) {
  os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void BinWriter::f32_array(const float* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) f32(p[i]);
}

std::uint8_t BinReader::u8() { return get_le<std::uint8_t>(is_); }
std::uint16_t BinReader::u16() { return get_le<std::uint16_t>(is_); }
std::uint32_t BinReader::u32() { return get_le<std::uint32_t>(is_); }
std::uint64_t BinReader::u64() { return get_le<std::uint64_t>(is_); }

float BinReader::f32() {
  const std::uint32_t bits = u32();
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void BinReader::bytes(void* p, std::size_t n) {
  is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (is_.gcount() != static_cast<std::streamsize>(n))
    throw TruncatedInput("truncated input while reading bytes");
}

void BinReader::f32_array(float* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) p[i] = f32();
}

void BinReader::skip(std::size_t n) {
  is_.ignore(static_cast<std::streamsize>(n));
  if (is_.gcount() != static_cast<std::streamsize>(n))
    throw TruncatedInput("truncated input while skipping");
}

bool BinReader::at_eof() { return is_.peek() == std::char_traits<char>::eof(); }

}  // namespace aan
