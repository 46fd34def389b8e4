#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cvsa/png.hpp"

namespace cvsa {

// RGB raster with float values in [0,1], row-major interleaved. Minimum size
// 8×8; construction and the 8-bit conversions clamp into range.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> rgb;  // height*width*3

  Image() = default;
  Image(std::size_t w, std::size_t h);

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return rgb[(y * width + x) * 3 + c];
  }
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return rgb[(y * width + x) * 3 + c];
  }

  void clamp();

  // Luma (0.299 R + 0.587 G + 0.114 B) plane, row-major height×width.
  std::vector<double> gray() const;
};

std::uint8_t to_byte(double v);  // round(clamp(v)*255)

RawImage8 to_raw8(const Image& img);
Image from_raw8(const RawImage8& raw);  // gray rasters are replicated to RGB

// File I/O. Format chosen by extension: .png, .ppm (P6) for color;
// .png, .pgm (P5) for single-channel rasters.
void save_image(const Image& img, const std::filesystem::path& path);
Image load_image(const std::filesystem::path& path);

void save_gray8(const RawImage8& gray, const std::filesystem::path& path);
RawImage8 load_gray8(const std::filesystem::path& path);  // errors on color input

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace cvsa
