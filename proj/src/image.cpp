#include "cvsa/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cvsa {

namespace {

void fail(const std::string& msg) { throw std::runtime_error("image: " + msg); }

std::string ext_of(const std::filesystem::path& path) {
  std::string e = path.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

// netpbm header token reader: skips whitespace and '#' comments.
std::size_t next_token(const std::vector<std::uint8_t>& b, std::size_t pos, std::string& tok) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  tok.clear();
  while (pos < b.size() && !std::isspace(b[pos])) tok.push_back(static_cast<char>(b[pos++]));
  if (tok.empty()) fail("truncated netpbm header");
  return pos;
}

RawImage8 decode_netpbm(const std::vector<std::uint8_t>& bytes) {
  std::string tok;
  std::size_t pos = next_token(bytes, 0, tok);
  std::size_t channels = 0;
  if (tok == "P6") {
    channels = 3;
  } else if (tok == "P5") {
    channels = 1;
  } else {
    fail("unsupported netpbm magic '" + tok + "'");
  }
  pos = next_token(bytes, pos, tok);
  const std::size_t w = std::stoul(tok);
  pos = next_token(bytes, pos, tok);
  const std::size_t h = std::stoul(tok);
  pos = next_token(bytes, pos, tok);
  if (std::stoul(tok) != 255) fail("only maxval 255 supported");
  ++pos;  // single whitespace after maxval
  RawImage8 img{w, h, channels, {}};
  const std::size_t need = w * h * channels;
  if (pos + need > bytes.size()) fail("truncated netpbm payload");
  img.pixels.assign(bytes.begin() + pos, bytes.begin() + pos + need);
  return img;
}

std::vector<std::uint8_t> encode_netpbm(const RawImage8& img) {
  std::string header = (img.channels == 3 ? std::string("P6\n") : std::string("P5\n")) +
                       std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

}  // namespace

Image::Image(std::size_t w, std::size_t h) : width(w), height(h) {
  if (w < 8 || h < 8) {
    throw std::invalid_argument("image: minimum size is 8x8, got " + std::to_string(w) + "x" +
                                std::to_string(h));
  }
  rgb.assign(w * h * 3, 0.0);
}

void Image::clamp() {
  for (double& v : rgb) v = std::min(1.0, std::max(0.0, v));
}

std::vector<double> Image::gray() const {
  std::vector<double> g(width * height);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = 0.299 * rgb[i * 3] + 0.587 * rgb[i * 3 + 1] + 0.114 * rgb[i * 3 + 2];
  }
  return g;
}

std::uint8_t to_byte(double v) {
  v = std::min(1.0, std::max(0.0, v));
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

RawImage8 to_raw8(const Image& img) {
  RawImage8 raw{img.width, img.height, 3, {}};
  raw.pixels.resize(img.rgb.size());
  for (std::size_t i = 0; i < img.rgb.size(); ++i) raw.pixels[i] = to_byte(img.rgb[i]);
  return raw;
}

Image from_raw8(const RawImage8& raw) {
  Image img(raw.width, raw.height);
  if (raw.channels == 3) {
    for (std::size_t i = 0; i < raw.pixels.size(); ++i) img.rgb[i] = raw.pixels[i] / 255.0;
  } else if (raw.channels == 1) {
    for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
      const double v = raw.pixels[i] / 255.0;
      img.rgb[i * 3] = img.rgb[i * 3 + 1] = img.rgb[i * 3 + 2] = v;
    }
  } else {
    fail("unsupported channel count");
  }
  return img;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail("short write to '" + path.string() + "'");
}

void save_image(const Image& img, const std::filesystem::path& path) {
  const RawImage8 raw = to_raw8(img);
  const std::string ext = ext_of(path);
  if (ext == ".png") {
    write_file(path, encode_png(raw));
  } else if (ext == ".ppm") {
    write_file(path, encode_netpbm(raw));
  } else {
    fail("unsupported image extension '" + ext + "' (use .png or .ppm)");
  }
}

Image load_image(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  RawImage8 raw;
  if (looks_like_png(bytes)) {
    raw = decode_png(bytes);
  } else {
    raw = decode_netpbm(bytes);
  }
  return from_raw8(raw);
}

void save_gray8(const RawImage8& gray, const std::filesystem::path& path) {
  if (gray.channels != 1) fail("save_gray8 expects a single-channel raster");
  const std::string ext = ext_of(path);
  if (ext == ".png") {
    write_file(path, encode_png(gray));
  } else if (ext == ".pgm") {
    write_file(path, encode_netpbm(gray));
  } else {
    fail("unsupported grayscale extension '" + ext + "' (use .png or .pgm)");
  }
}

RawImage8 load_gray8(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  RawImage8 raw = looks_like_png(bytes) ? decode_png(bytes) : decode_netpbm(bytes);
  if (raw.channels != 1) {
    fail("'" + path.string() + "' is not an 8-bit grayscale image");
  }
  return raw;
}

}  // namespace cvsa
