#include "cvsa/png.hpp"

#include <array>
#include <cstring>
#include <stdexcept>
#include <string>

namespace cvsa {

namespace {

void fail(const std::string& msg) { throw std::runtime_error("png: " + msg); }

// ---- checksums ----

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t n = 0; n < 256; ++n) {
    std::uint32_t c = n;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    table[n] = c;
  }
  return table;
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  static const auto table = make_crc_table();
  std::uint32_t c = 0xffffffffu;
  for (std::uint8_t b : bytes) c = table[(c ^ b) & 0xff] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

std::uint32_t adler32(std::span<const std::uint8_t> bytes) {
  const std::uint32_t mod = 65521;
  std::uint32_t a = 1, b = 0;
  for (std::uint8_t x : bytes) {
    a = (a + x) % mod;
    b = (b + a) % mod;
  }
  return (b << 16) | a;
}

// ---- inflate ----

namespace {

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t bits(std::size_t n) {
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (bitpos_ == 0) {
        if (pos_ >= bytes_.size()) fail("truncated deflate stream");
        cur_ = bytes_[pos_++];
      }
      v |= static_cast<std::uint32_t>((cur_ >> bitpos_) & 1u) << i;
      bitpos_ = (bitpos_ + 1) & 7;
    }
    return v;
  }

  void align_byte() { bitpos_ = 0; }

  std::uint8_t byte() {
    if (pos_ >= bytes_.size()) fail("truncated deflate stream");
    return bytes_[pos_++];
  }

  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint8_t cur_ = 0;
  std::size_t bitpos_ = 0;
};

// Canonical Huffman decoder over code lengths.
struct Huffman {
  std::array<std::uint16_t, 16> count{};
  std::vector<std::uint16_t> symbol;

  void build(std::span<const std::uint8_t> lengths) {
    count.fill(0);
    for (std::uint8_t len : lengths) count[len]++;
    count[0] = 0;
    std::array<std::uint16_t, 16> offs{};
    for (int len = 1; len < 16; ++len) offs[len] = offs[len - 1] + count[len - 1];
    symbol.assign(lengths.size(), 0);
    for (std::size_t s = 0; s < lengths.size(); ++s) {
      if (lengths[s] != 0) symbol[offs[lengths[s]]++] = static_cast<std::uint16_t>(s);
    }
  }

  int decode(BitReader& br) const {
    int code = 0, first = 0, index = 0;
    for (int len = 1; len < 16; ++len) {
      code |= static_cast<int>(br.bits(1));
      const int n = count[len];
      if (code - first < n) return symbol[index + (code - first)];
      index += n;
      first = (first + n) << 1;
      code <<= 1;
    }
    fail("invalid huffman code");
    return -1;
  }
};

constexpr std::uint16_t kLenBase[29] = {3,  4,  5,  6,  7,  8,  9,  10, 11,  13,
                                        15, 17, 19, 23, 27, 31, 35, 43, 51,  59,
                                        67, 83, 99, 115, 131, 163, 195, 227, 258};
constexpr std::uint8_t kLenExtra[29] = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2,
                                        2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0};
constexpr std::uint16_t kDistBase[30] = {1,    2,    3,    4,    5,    7,     9,    13,
                                         17,   25,   33,   49,   65,   97,    129,  193,
                                         257,  385,  513,  769,  1025, 1537,  2049, 3073,
                                         4097, 6145, 8193, 12289, 16385, 24577};
constexpr std::uint8_t kDistExtra[30] = {0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4,  4,  5,  5,  6,
                                         6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13};

void inflate_block(BitReader& br, const Huffman& lit, const Huffman& dist,
                   std::vector<std::uint8_t>& out) {
  for (;;) {
    const int sym = lit.decode(br);
    if (sym < 256) {
      out.push_back(static_cast<std::uint8_t>(sym));
    } else if (sym == 256) {
      return;
    } else {
      const int li = sym - 257;
      if (li >= 29) fail("invalid length symbol");
      const std::size_t len = kLenBase[li] + br.bits(kLenExtra[li]);
      const int di = dist.decode(br);
      if (di >= 30) fail("invalid distance symbol");
      const std::size_t d = kDistBase[di] + br.bits(kDistExtra[di]);
      if (d > out.size()) fail("distance beyond window");
      for (std::size_t i = 0; i < len; ++i) out.push_back(out[out.size() - d]);
    }
  }
}

}  // namespace

std::vector<std::uint8_t> zlib_inflate(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 6) fail("zlib stream too short");
  const std::uint8_t cmf = bytes[0], flg = bytes[1];
  if ((cmf & 0x0f) != 8) fail("unsupported zlib compression method");
  if ((static_cast<unsigned>(cmf) * 256 + flg) % 31 != 0) fail("bad zlib header check");
  if (flg & 0x20) fail("preset dictionary not supported");

  BitReader br(bytes.subspan(2, bytes.size() - 6));
  std::vector<std::uint8_t> out;
  for (;;) {
    const std::uint32_t bfinal = br.bits(1);
    const std::uint32_t btype = br.bits(2);
    if (btype == 0) {
      br.align_byte();
      const std::size_t len = br.byte() | (static_cast<std::size_t>(br.byte()) << 8);
      const std::size_t nlen = br.byte() | (static_cast<std::size_t>(br.byte()) << 8);
      if ((len ^ nlen) != 0xffff) fail("stored block length check failed");
      for (std::size_t i = 0; i < len; ++i) out.push_back(br.byte());
    } else if (btype == 1) {
      std::vector<std::uint8_t> lit_len(288);
      for (std::size_t i = 0; i < 288; ++i) {
        lit_len[i] = i < 144 ? 8 : i < 256 ? 9 : i < 280 ? 7 : 8;
      }
      std::vector<std::uint8_t> dist_len(30, 5);
      Huffman lit, dist;
      lit.build(lit_len);
      dist.build(dist_len);
      inflate_block(br, lit, dist, out);
    } else if (btype == 2) {
      const std::size_t hlit = br.bits(5) + 257;
      const std::size_t hdist = br.bits(5) + 1;
      const std::size_t hclen = br.bits(4) + 4;
      static constexpr std::uint8_t order[19] = {16, 17, 18, 0, 8,  7, 9,  6, 10, 5,
                                                 11, 4,  12, 3, 13, 2, 14, 1, 15};
      std::vector<std::uint8_t> cl_len(19, 0);
      for (std::size_t i = 0; i < hclen; ++i) cl_len[order[i]] = static_cast<std::uint8_t>(br.bits(3));
      Huffman cl;
      cl.build(cl_len);
      std::vector<std::uint8_t> lens;
      lens.reserve(hlit + hdist);
      while (lens.size() < hlit + hdist) {
        const int sym = cl.decode(br);
        if (sym < 16) {
          lens.push_back(static_cast<std::uint8_t>(sym));
        } else if (sym == 16) {
          if (lens.empty()) fail("repeat with no previous length");
          const std::size_t rep = 3 + br.bits(2);
          lens.insert(lens.end(), rep, lens.back());
        } else if (sym == 17) {
          lens.insert(lens.end(), 3 + br.bits(3), 0);
        } else {
          lens.insert(lens.end(), 11 + br.bits(7), 0);
        }
      }
      if (lens.size() != hlit + hdist) fail("code length overflow");
      Huffman lit, dist;
      lit.build(std::span<const std::uint8_t>(lens.data(), hlit));
      dist.build(std::span<const std::uint8_t>(lens.data() + hlit, hdist));
      inflate_block(br, lit, dist, out);
    } else {
      fail("invalid deflate block type");
    }
    if (bfinal) break;
  }

  const std::size_t tail = 2 + br.pos();
  if (tail + 4 > bytes.size()) fail("missing adler32 trailer");
  const std::uint32_t want = (static_cast<std::uint32_t>(bytes[tail]) << 24) |
                             (static_cast<std::uint32_t>(bytes[tail + 1]) << 16) |
                             (static_cast<std::uint32_t>(bytes[tail + 2]) << 8) |
                             static_cast<std::uint32_t>(bytes[tail + 3]);
  if (adler32(out) != want) fail("adler32 mismatch");
  return out;
}

std::vector<std::uint8_t> zlib_deflate_stored(std::span<const std::uint8_t> raw) {
  std::vector<std::uint8_t> out;
  out.push_back(0x78);
  out.push_back(0x01);
  std::size_t pos = 0;
  do {
    const std::size_t chunk = std::min<std::size_t>(raw.size() - pos, 65535);
    const bool final = pos + chunk == raw.size();
    out.push_back(final ? 1 : 0);
    out.push_back(static_cast<std::uint8_t>(chunk & 0xff));
    out.push_back(static_cast<std::uint8_t>(chunk >> 8));
    out.push_back(static_cast<std::uint8_t>(~chunk & 0xff));
    out.push_back(static_cast<std::uint8_t>((~chunk >> 8) & 0xff));
    out.insert(out.end(), raw.begin() + pos, raw.begin() + pos + chunk);
    pos += chunk;
  } while (pos < raw.size());
  const std::uint32_t a = adler32(raw);
  out.push_back(static_cast<std::uint8_t>(a >> 24));
  out.push_back(static_cast<std::uint8_t>(a >> 16));
  out.push_back(static_cast<std::uint8_t>(a >> 8));
  out.push_back(static_cast<std::uint8_t>(a));
  return out;
}

// ---- PNG container ----

namespace {

constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void write_chunk(std::vector<std::uint8_t>& out, const char type[4],
                 std::span<const std::uint8_t> data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::vector<std::uint8_t> body;
  body.insert(body.end(), type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.insert(out.end(), body.begin(), body.end());
  put_u32(out, crc32(body));
}

std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

}  // namespace

bool looks_like_png(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kSignature, 8) == 0;
}

std::vector<std::uint8_t> encode_png(const RawImage8& img) {
  if (img.channels != 1 && img.channels != 3) fail("encoder supports 1 or 3 channels");
  if (img.pixels.size() != img.width * img.height * img.channels) fail("pixel buffer size mismatch");
  std::vector<std::uint8_t> out(kSignature, kSignature + 8);

  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                                   // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);           // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(out, "IHDR", ihdr);

  const std::size_t stride = img.width * img.channels;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.pixels.begin() + y * stride, img.pixels.begin() + (y + 1) * stride);
  }
  write_chunk(out, "IDAT", zlib_deflate_stored(raw));
  write_chunk(out, "IEND", {});
  return out;
}

RawImage8 decode_png(std::span<const std::uint8_t> bytes) {
  if (!looks_like_png(bytes)) fail("bad signature");
  std::size_t pos = 8;
  RawImage8 img;
  std::vector<std::uint8_t> idat;
  bool seen_ihdr = false, seen_iend = false;
  while (pos + 12 <= bytes.size() && !seen_iend) {
    const std::uint32_t len = read_u32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) fail("truncated chunk");
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const std::uint8_t* data = &bytes[pos + 8];
    const std::uint32_t want_crc = read_u32(&bytes[pos + 8 + len]);
    if (crc32(bytes.subspan(pos + 4, 4 + len)) != want_crc) fail("chunk crc mismatch");
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) fail("bad IHDR");
      img.width = read_u32(data);
      img.height = read_u32(data + 4);
      const std::uint8_t depth = data[8], color = data[9], interlace = data[12];
      if (depth != 8) fail("only 8-bit depth supported");
      if (color == 0) {
        img.channels = 1;
      } else if (color == 2) {
        img.channels = 3;
      } else {
        fail("only grayscale and RGB color types supported");
      }
      if (interlace != 0) fail("interlaced images not supported");
      seen_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      seen_iend = true;
    }
    pos += 12 + len;
  }
  if (!seen_ihdr || img.width == 0 || img.height == 0) fail("missing IHDR");
  if (idat.empty()) fail("missing IDAT");

  const std::vector<std::uint8_t> raw = zlib_inflate(idat);
  const std::size_t bpp = img.channels;
  const std::size_t stride = img.width * bpp;
  if (raw.size() != (stride + 1) * img.height) fail("decoded size mismatch");

  img.pixels.assign(stride * img.height, 0);
  std::vector<std::uint8_t> prev(stride, 0);
  for (std::size_t y = 0; y < img.height; ++y) {
    const std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = &raw[y * (stride + 1) + 1];
    std::uint8_t* dst = &img.pixels[y * stride];
    for (std::size_t x = 0; x < stride; ++x) {
      const int a = x >= bpp ? dst[x - bpp] : 0;
      const int b = prev[x];
      const int c = x >= bpp ? prev[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: fail("unknown scanline filter");
      }
      dst[x] = static_cast<std::uint8_t>(v & 0xff);
    }
    std::memcpy(prev.data(), dst, stride);
  }
  return img;
}

}  // namespace cvsa
