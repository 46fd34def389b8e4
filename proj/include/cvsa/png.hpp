#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace cvsa {

// 8-bit raster, channels = 1 (gray) or 3 (RGB), row-major interleaved.
struct RawImage8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;
};

// Minimal PNG support: 8-bit grayscale and RGB, no interlacing. The encoder
// emits uncompressed (stored) deflate blocks, which every PNG reader accepts;
// the decoder handles stored, fixed-Huffman and dynamic-Huffman streams and
// all five scanline filters.
std::vector<std::uint8_t> encode_png(const RawImage8& img);
RawImage8 decode_png(std::span<const std::uint8_t> bytes);

bool looks_like_png(std::span<const std::uint8_t> bytes);

// zlib stream helpers (exposed for tests).
std::vector<std::uint8_t> zlib_inflate(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> zlib_deflate_stored(std::span<const std::uint8_t> raw);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);
std::uint32_t adler32(std::span<const std::uint8_t> bytes);

}  // namespace cvsa
