#include "cvsa/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cvsa/saliency.hpp"
#include "cvsa/tape.hpp"
#include "json.hpp"

namespace cvsa {

namespace {

void expect(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  v = mx;
  const double d = mx - mn;
  s = mx <= 0.0 ? 0.0 : d / mx;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (mx == r) {
    h = std::fmod((g - b) / d, 6.0);
  } else if (mx == g) {
    h = (b - r) / d + 2.0;
  } else {
    h = (r - g) / d + 4.0;
  }
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h -= std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(hp)) {
    case 0: r1 = c; g1 = x; break;
    case 1: r1 = x; g1 = c; break;
    case 2: g1 = c; b1 = x; break;
    case 3: g1 = x; b1 = c; break;
    case 4: r1 = x; b1 = c; break;
    default: r1 = c; b1 = x; break;
  }
  const double m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

// Bilinear sample of the fg patch region at patch-local float coords,
// clamped so taps never leave the patch.
double sample_patch(const Image& fg, const BBox& patch, double py, double px, std::size_t c) {
  const double max_y = static_cast<double>(patch.h - 1);
  const double max_x = static_cast<double>(patch.w - 1);
  py = std::clamp(py, 0.0, max_y);
  px = std::clamp(px, 0.0, max_x);
  const std::size_t y0 = static_cast<std::size_t>(py);
  const std::size_t x0 = static_cast<std::size_t>(px);
  const std::size_t y1 = std::min<std::size_t>(y0 + 1, static_cast<std::size_t>(patch.h - 1));
  const std::size_t x1 = std::min<std::size_t>(x0 + 1, static_cast<std::size_t>(patch.w - 1));
  const double fy = py - static_cast<double>(y0);
  const double fx = px - static_cast<double>(x0);
  const std::size_t by = static_cast<std::size_t>(patch.t);
  const std::size_t bx = static_cast<std::size_t>(patch.l);
  return (1 - fy) * (1 - fx) * fg.at(by + y0, bx + x0, c) +
         (1 - fy) * fx * fg.at(by + y0, bx + x1, c) +
         fy * (1 - fx) * fg.at(by + y1, bx + x0, c) +
         fy * fx * fg.at(by + y1, bx + x1, c);
}

FusedView paste_patch(const Image& fg, const BBox& patch, const Image& bg, const BBox& target) {
  FusedView out;
  out.image = bg;
  out.pasted = target;
  out.mask = BinaryMask(bg.width, bg.height);
  out.mask.fill_box(target);
  const double sy_scale = static_cast<double>(patch.h) / static_cast<double>(target.h);
  const double sx_scale = static_cast<double>(patch.w) / static_cast<double>(target.w);
  for (int y = 0; y < target.h; ++y) {
    const double py = (static_cast<double>(y) + 0.5) * sy_scale - 0.5;
    for (int x = 0; x < target.w; ++x) {
      const double px = (static_cast<double>(x) + 0.5) * sx_scale - 0.5;
      for (std::size_t c = 0; c < 3; ++c) {
        out.image.at(static_cast<std::size_t>(target.t + y), static_cast<std::size_t>(target.l + x),
                     c) = sample_patch(fg, patch, py, px, c);
      }
    }
  }
  return out;
}

}  // namespace

std::size_t BinaryMask::count_ones() const {
  std::size_t n = 0;
  for (std::uint8_t v : values) n += v;
  return n;
}

void BinaryMask::fill_box(const BBox& b) {
  for (int y = b.t; y < b.bottom(); ++y) {
    for (int x = b.l; x < b.right(); ++x) {
      at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1;
    }
  }
}

void BinaryMask::flip_horizontal() {
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width / 2; ++x) {
      std::swap(at(y, x), at(y, width - 1 - x));
    }
  }
}

void AugConfig::validate() const {
  expect(lambda > 0.0 && lambda <= 1.0, "aug config: lambda must be in (0, 1]");
  expect(beta > 0.0 && beta <= 1.0, "aug config: beta must be in (0, 1]");
  expect(aspect_lo > 0.0 && aspect_lo <= aspect_hi, "aug config: bad aspect range");
  for (double p : {jitter_prob, grayscale_prob, blur_prob, flip_prob}) {
    expect(p >= 0.0 && p <= 1.0, "aug config: probabilities must lie in [0, 1]");
  }
  expect(blur_kernel % 2 == 1, "aug config: blur kernel must be odd");
  expect(blur_sigma_lo > 0.0 && blur_sigma_lo <= blur_sigma_hi, "aug config: bad blur sigma range");
}

BBox sample_patch_in_box(const BBox& b_f, double lambda, Rng& rng, double aspect_lo,
                         double aspect_hi) {
  expect(lambda > 0.0 && lambda <= 1.0, "sample_patch_in_box: lambda must be in (0, 1]");
  const double area_f = static_cast<double>(b_f.area());
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double ratio = rng.uniform(lambda, 1.0);
    const double aspect = std::exp(rng.uniform(std::log(aspect_lo), std::log(aspect_hi)));
    const double target = ratio * area_f;
    long long w = std::llround(std::sqrt(target * aspect));
    long long h = std::llround(std::sqrt(target / aspect));
    w = std::clamp<long long>(w, 1, b_f.w);
    h = std::clamp<long long>(h, 1, b_f.h);
    if (static_cast<double>(w * h) < lambda * area_f) continue;
    const int l = b_f.l + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(b_f.w - w + 1)));
    const int t = b_f.t + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(b_f.h - h + 1)));
    return BBox{l, t, static_cast<int>(w), static_cast<int>(h)};
  }
  return b_f;
}

FusedView fuse_same_dataset(const Image& fg, const BBox& patch, const Image& bg,
                            const BBox& bg_box) {
  expect(patch.w >= 1 && patch.h >= 1 && bg_box.w >= 1 && bg_box.h >= 1,
         "fuse_same_dataset: degenerate box");
  expect(patch.within(fg.width, fg.height), "fuse_same_dataset: patch outside foreground image");
  expect(bg_box.within(bg.width, bg.height), "fuse_same_dataset: box outside background image");
  return paste_patch(fg, patch, bg, bg_box);
}

FusedView fuse_cross_dataset(const Image& fg, const BBox& patch, const Image& bg, double beta,
                             Rng& rng) {
  expect(beta > 0.0 && beta <= 1.0, "fuse_cross_dataset: beta must be in (0, 1]");
  expect(patch.within(fg.width, fg.height), "fuse_cross_dataset: patch outside foreground image");
  const double ratio = rng.uniform(beta, 1.0);
  const double target_area = ratio * static_cast<double>(bg.width) * static_cast<double>(bg.height);
  const double aspect = static_cast<double>(patch.w) / static_cast<double>(patch.h);
  long long w = std::llround(std::sqrt(target_area * aspect));
  long long h = std::llround(std::sqrt(target_area / aspect));
  w = std::clamp<long long>(w, 1, static_cast<long long>(bg.width));
  h = std::clamp<long long>(h, 1, static_cast<long long>(bg.height));
  const int l = static_cast<int>(rng.uniform_int(bg.width - static_cast<std::size_t>(w) + 1));
  const int t = static_cast<int>(rng.uniform_int(bg.height - static_cast<std::size_t>(h) + 1));
  const BBox target{l, t, static_cast<int>(w), static_cast<int>(h)};
  return paste_patch(fg, patch, bg, target);
}

SwapResult saliency_swap(const Image& src, const BBox& src_box, const AugPool& bg_pool,
                         const AugConfig& cfg, Rng& rng) {
  expect(bg_pool.size() > 0, "saliency_swap: background pool is empty");
  expect(src_box.within(src.width, src.height), "saliency_swap: source box outside image");
  const std::size_t bg_index = rng.uniform_int(bg_pool.size());
  const Image& bg = (*bg_pool.images)[bg_index];
  const BBox patch = sample_patch_in_box(src_box, cfg.lambda, rng, cfg.aspect_lo, cfg.aspect_hi);

  FusedView fused;
  if (cfg.fusion == AugConfig::FusionMode::same) {
    expect(bg_pool.boxes != nullptr && bg_pool.boxes->size() == bg_pool.size(),
           "saliency_swap: mode I needs saliency boxes for the background pool");
    fused = fuse_same_dataset(src, patch, bg, (*bg_pool.boxes)[bg_index]);
  } else {
    fused = fuse_cross_dataset(src, patch, bg, cfg.beta, rng);
  }
  return SwapResult{std::move(fused.image), std::move(fused.mask), src_box, patch, fused.pasted};
}

Image apply_photometric(const Image& img, BinaryMask* mask, const AugConfig& cfg, Rng& rng) {
  if (mask != nullptr) {
    expect(mask->width == img.width && mask->height == img.height,
           "apply_photometric: mask dimensions do not match the image");
  }
  Image out = img;

  if (rng.uniform() < cfg.jitter_prob) {
    // random order of the four jitter sub-ops
    int order[4] = {0, 1, 2, 3};
    for (int i = 3; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[i], order[j]);
    }
    for (int op : order) {
      switch (op) {
        case 0: {  // brightness
          const double f = rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness);
          for (double& v : out.rgb) v *= f;
          break;
        }
        case 1: {  // contrast, blended against the mean luma
          const double f = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast);
          double m = 0.0;
          for (std::size_t i = 0; i < out.width * out.height; ++i) {
            m += luma(out.rgb[i * 3], out.rgb[i * 3 + 1], out.rgb[i * 3 + 2]);
          }
          m /= static_cast<double>(out.width * out.height);
          for (double& v : out.rgb) v = (v - m) * f + m;
          break;
        }
        case 2: {  // saturation, blended against per-pixel luma
          const double f = rng.uniform(1.0 - cfg.saturation, 1.0 + cfg.saturation);
          for (std::size_t i = 0; i < out.width * out.height; ++i) {
            const double g = luma(out.rgb[i * 3], out.rgb[i * 3 + 1], out.rgb[i * 3 + 2]);
            for (std::size_t c = 0; c < 3; ++c) {
              out.rgb[i * 3 + c] = g + (out.rgb[i * 3 + c] - g) * f;
            }
          }
          break;
        }
        default: {  // hue rotation, fraction of the hue circle
          const double delta = rng.uniform(-cfg.hue, cfg.hue);
          for (std::size_t i = 0; i < out.width * out.height; ++i) {
            double h, s, v;
            double r = std::clamp(out.rgb[i * 3], 0.0, 1.0);
            double g = std::clamp(out.rgb[i * 3 + 1], 0.0, 1.0);
            double b = std::clamp(out.rgb[i * 3 + 2], 0.0, 1.0);
            rgb_to_hsv(r, g, b, h, s, v);
            hsv_to_rgb(h + delta, s, v, r, g, b);
            out.rgb[i * 3] = r;
            out.rgb[i * 3 + 1] = g;
            out.rgb[i * 3 + 2] = b;
          }
          break;
        }
      }
    }
  }

  if (rng.uniform() < cfg.grayscale_prob) {
    for (std::size_t i = 0; i < out.width * out.height; ++i) {
      const double g = luma(out.rgb[i * 3], out.rgb[i * 3 + 1], out.rgb[i * 3 + 2]);
      out.rgb[i * 3] = out.rgb[i * 3 + 1] = out.rgb[i * 3 + 2] = g;
    }
  }

  if (rng.uniform() < cfg.blur_prob) {
    const double sigma = rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi);
    gaussian_blur_raw(out.rgb.data(), out.height, out.width, 3, sigma, cfg.blur_kernel);
  }

  if (rng.uniform() < cfg.flip_prob) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width / 2; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          std::swap(out.at(y, x, c), out.at(y, out.width - 1 - x, c));
        }
      }
    }
    if (mask != nullptr) mask->flip_horizontal();
  }

  out.clamp();
  return out;
}

CropResult random_resized_crop(const Image& img, double scale_lo, double scale_hi, Rng& rng,
                               double aspect_lo, double aspect_hi) {
  expect(scale_lo > 0.0 && scale_lo <= scale_hi && scale_hi <= 1.0,
         "random_resized_crop: scale range must satisfy 0 < lo <= hi <= 1");
  const std::size_t W = img.width, H = img.height;
  const double area = static_cast<double>(W) * static_cast<double>(H);
  BBox crop{0, 0, static_cast<int>(W), static_cast<int>(H)};
  bool found = false;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double target = rng.uniform(scale_lo, scale_hi) * area;
    const double aspect = std::exp(rng.uniform(std::log(aspect_lo), std::log(aspect_hi)));
    const long long w = std::llround(std::sqrt(target * aspect));
    const long long h = std::llround(std::sqrt(target / aspect));
    if (w >= 1 && h >= 1 && w <= static_cast<long long>(W) && h <= static_cast<long long>(H)) {
      crop.w = static_cast<int>(w);
      crop.h = static_cast<int>(h);
      crop.l = static_cast<int>(rng.uniform_int(W - static_cast<std::size_t>(w) + 1));
      crop.t = static_cast<int>(rng.uniform_int(H - static_cast<std::size_t>(h) + 1));
      found = true;
    }
  }
  if (!found) {
    // centered square fallback
    const int side = static_cast<int>(std::min(W, H));
    crop = BBox{(static_cast<int>(W) - side) / 2, (static_cast<int>(H) - side) / 2, side, side};
  }
  // crop and resize back to the original dimensions
  std::vector<double> region(static_cast<std::size_t>(crop.w) * static_cast<std::size_t>(crop.h) *
                             3);
  for (int y = 0; y < crop.h; ++y) {
    for (int x = 0; x < crop.w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        region[(static_cast<std::size_t>(y) * static_cast<std::size_t>(crop.w) +
                static_cast<std::size_t>(x)) *
                   3 +
               c] = img.at(static_cast<std::size_t>(crop.t + y),
                           static_cast<std::size_t>(crop.l + x), c);
      }
    }
  }
  CropResult out;
  out.crop = crop;
  out.image = Image(W, H);
  bilinear_resample_raw(region.data(), static_cast<std::size_t>(crop.h),
                        static_cast<std::size_t>(crop.w), out.image.rgb.data(), H, W, 3);
  out.image.clamp();
  return out;
}

ViewPair make_view_pair(const Image& src, const BBox& src_box, const AugPool& bg_pool,
                        const AugConfig& cfg, Rng& rng) {
  ViewPair pair;
  SwapResult q = saliency_swap(src, src_box, bg_pool, cfg, rng);
  pair.m_q = std::move(q.mask);
  pair.q = apply_photometric(q.image, &pair.m_q, cfg, rng);
  SwapResult k = saliency_swap(src, src_box, bg_pool, cfg, rng);
  pair.m_k = std::move(k.mask);
  pair.k = apply_photometric(k.image, &pair.m_k, cfg, rng);
  return pair;
}

// ---- synthetic corpus ----

namespace {

enum class Shape { disc, square, triangle, diamond };

bool inside_shape(Shape shape, int side, int x, int y) {
  const double c = (side - 1) / 2.0;
  const double dx = x - c, dy = y - c;
  switch (shape) {
    case Shape::disc:
      return dx * dx + dy * dy <= (side / 2.0) * (side / 2.0);
    case Shape::square:
      return true;
    case Shape::triangle: {
      // apex at top center, base along the bottom edge
      const double fy = static_cast<double>(y) / std::max(1, side - 1);
      const double half = fy * (side / 2.0);
      return std::fabs(dx) <= half;
    }
    case Shape::diamond:
    default:
      return std::fabs(dx) + std::fabs(dy) <= side / 2.0;
  }
}

}  // namespace

std::vector<SyntheticItem> generate_synthetic_corpus(std::size_t n, std::size_t n_classes,
                                                     std::size_t img_size, std::uint64_t seed) {
  expect(n_classes >= 2, "generate_synthetic_corpus: need at least 2 classes");
  expect(n >= n_classes, "generate_synthetic_corpus: need at least one image per class");
  expect(img_size >= 16, "generate_synthetic_corpus: image size must be at least 16");

  const int side_min = static_cast<int>(std::ceil(std::sqrt(0.05) * static_cast<double>(img_size)));
  const int side_max = static_cast<int>(std::floor(0.5 * static_cast<double>(img_size)));

  std::vector<SyntheticItem> items;
  items.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(Rng::mix(seed, i));
    SyntheticItem item;
    item.label = static_cast<int>(i % n_classes);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%05zu.png", i);
    item.name = buf;

    // background: smooth tinted noise, class-independent, kept dark
    Image img(img_size, img_size);
    const std::size_t grid = 8;
    std::vector<double> coarse(grid * grid * 3);
    const double tint_h = rng.uniform();
    for (std::size_t g = 0; g < grid * grid; ++g) {
      double r, gg, b;
      hsv_to_rgb(tint_h + rng.uniform(-0.08, 0.08), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.45),
                 r, gg, b);
      coarse[g * 3] = r;
      coarse[g * 3 + 1] = gg;
      coarse[g * 3 + 2] = b;
    }
    bilinear_resample_raw(coarse.data(), grid, grid, img.rgb.data(), img_size, img_size, 3);
    for (double& v : img.rgb) v += rng.uniform(-0.04, 0.04);

    // The class is coded by (shape, texture). The four texture kinds --
    // horizontal stripes, vertical stripes, an isotropic dot grid, solid --
    // differ in orientation energy and flatness, cues that survive cropping,
    // color jitter, grayscale, Gaussian blur and horizontal flips. Hue is
    // drawn per image and carries no label information (color shortcuts
    // would reward an untrained net as much as a trained one).
    const Shape shape = static_cast<Shape>(item.label % 4);
    const int texture = item.label % 4;  // 0 h-stripes, 1 v-stripes, 2 dots, 3 solid
    const double img_hue = rng.uniform();
    double fr, fg, fb;
    hsv_to_rgb(img_hue, 0.7, 0.95, fr, fg, fb);
    double ar, ag, ab;  // dark accent, same hue
    hsv_to_rgb(img_hue, 0.7, 0.22, ar, ag, ab);

    const int side = side_min + static_cast<int>(rng.uniform_int(
                                    static_cast<std::uint64_t>(side_max - side_min + 1)));
    const int l = static_cast<int>(rng.uniform_int(img_size - static_cast<std::size_t>(side) + 1));
    const int t = static_cast<int>(rng.uniform_int(img_size - static_cast<std::size_t>(side) + 1));
    item.box = BBox{l, t, side, side};

    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        if (!inside_shape(shape, side, x, y)) continue;
        bool accent = false;
        if (texture == 0) {
          accent = (y / 2) % 2 == 1;
        } else if (texture == 1) {
          accent = (x / 2) % 2 == 1;
        } else if (texture == 2) {
          accent = (x % 4) < 2 && (y % 4) < 2;
        }
        const double noise = rng.uniform(-0.03, 0.03);
        img.at(static_cast<std::size_t>(t + y), static_cast<std::size_t>(l + x), 0) =
            (accent ? ar : fr) + noise;
        img.at(static_cast<std::size_t>(t + y), static_cast<std::size_t>(l + x), 1) =
            (accent ? ag : fg) + noise;
        img.at(static_cast<std::size_t>(t + y), static_cast<std::size_t>(l + x), 2) =
            (accent ? ab : fb) + noise;
      }
    }
    img.clamp();
    item.image = std::move(img);
    items.push_back(std::move(item));
  }
  return items;
}

void write_synthetic_corpus(const std::vector<SyntheticItem>& items,
                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<BoxAnnotation> anns;
  anns.reserve(items.size());
  std::ofstream labels(dir / "labels.jsonl", std::ios::trunc);
  if (!labels) throw std::runtime_error("cannot write labels.jsonl in '" + dir.string() + "'");
  for (const SyntheticItem& item : items) {
    save_image(item.image, dir / item.name);
    anns.push_back(BoxAnnotation{item.name, item.box});
    nlohmann::ordered_json j;
    j["image"] = item.name;
    j["label"] = item.label;
    labels << j.dump() << "\n";
  }
  save_annotations(anns, dir / "annotations.jsonl");
}

}  // namespace cvsa
