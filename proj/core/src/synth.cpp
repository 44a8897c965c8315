#include "cldl/synth.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace cldl {
namespace {

// 5x7 digit glyphs, three handwriting-style variants per class, '1' marking
// inked cells. The variants differ structurally (open vs closed 4, crossbar
// 7, pinched 8, ...) so each class is genuinely multimodal and independently
// trained models cannot all settle on one template per class.
constexpr std::array<std::array<std::array<const char*, 7>, 3>, 10> kGlyphs = {{
    {{{"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
      {"01110", "10001", "10001", "10001", "10001", "10001", "01110"},
      {"00100", "01010", "10001", "10001", "10001", "01010", "00100"}}},  // 0
    {{{"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
      {"00010", "00110", "01010", "00010", "00010", "00010", "00010"},
      {"00100", "00100", "00100", "00100", "00100", "00100", "00100"}}},  // 1
    {{{"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
      {"11110", "00001", "00001", "01110", "10000", "10000", "11111"},
      {"01110", "10001", "00001", "00110", "01000", "10000", "11111"}}},  // 2
    {{{"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
      {"01110", "10001", "00001", "00110", "00001", "10001", "01110"},
      {"11110", "00001", "00001", "11110", "00001", "00001", "11110"}}},  // 3
    {{{"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
      {"01000", "01000", "01010", "01010", "11111", "00010", "00010"},
      {"00100", "01100", "10100", "11111", "00100", "00100", "00100"}}},  // 4
    {{{"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
      {"01111", "01000", "01110", "00001", "00001", "00001", "11110"},
      {"11111", "10000", "10000", "11110", "00001", "10001", "01110"}}},  // 5
    {{{"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
      {"01110", "10000", "10000", "11110", "10001", "10001", "01110"},
      {"00010", "00100", "01000", "11110", "10001", "10001", "01110"}}},  // 6
    {{{"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
      {"11111", "00001", "00010", "01111", "00100", "01000", "01000"},
      {"01111", "00001", "00010", "00010", "00100", "00100", "00100"}}},  // 7
    {{{"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
      {"01110", "10001", "01010", "00100", "01010", "10001", "01110"},
      {"01110", "10001", "10001", "11111", "10001", "10001", "01110"}}},  // 8
    {{{"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
      {"01110", "10001", "10001", "01111", "00001", "00001", "00001"},
      {"01110", "10001", "10001", "01110", "00100", "01000", "10000"}}},  // 9
}};

constexpr std::int64_t kSide = 28;
constexpr std::size_t kGlyphW = 5;
constexpr std::size_t kGlyphH = 7;

using GlyphGrid = std::array<std::array<bool, kGlyphW>, kGlyphH>;

GlyphGrid build_glyph(int digit, int variant, Rng& rng) {
  GlyphGrid grid{};
  const auto& rows =
      kGlyphs[static_cast<std::size_t>(digit)][static_cast<std::size_t>(variant)];
  for (std::size_t r = 0; r < kGlyphH; ++r)
    for (std::size_t c = 0; c < kGlyphW; ++c) grid[r][c] = rows[r][c] == '1';
  // Occasional broken stroke, as in scribbled digits.
  if (rng.uniform(0.0, 1.0) < 0.2) {
    const std::size_t dr = static_cast<std::size_t>(rng.uniform_int(kGlyphH));
    const std::size_t dc = static_cast<std::size_t>(rng.uniform_int(kGlyphW));
    grid[dr][dc] = false;
  }
  return grid;
}

bool glyph_cell(const GlyphGrid& grid, double gx, double gy) {
  if (gx < 0.0 || gy < 0.0 || gx >= static_cast<double>(kGlyphW) ||
      gy >= static_cast<double>(kGlyphH))
    return false;
  return grid[static_cast<std::size_t>(gy)][static_cast<std::size_t>(gx)];
}

// Stroke-width morphology in glyph units: a positive radius dilates (inked
// if any probe hits), a negative radius erodes (inked only if the whole
// neighborhood is ink).
bool inked(const GlyphGrid& grid, double gx, double gy, double radius) {
  const double r = std::fabs(radius);
  const bool c = glyph_cell(grid, gx, gy);
  if (r == 0.0) return c;
  const bool n = glyph_cell(grid, gx, gy - r);
  const bool s = glyph_cell(grid, gx, gy + r);
  const bool w = glyph_cell(grid, gx - r, gy);
  const bool e = glyph_cell(grid, gx + r, gy);
  if (radius > 0.0) return c || n || s || w || e;
  return c && n && s && w && e;
}

}  // namespace

Dataset make_synthetic_digits(std::int64_t n_examples, std::uint64_t seed,
                              const std::string& split) {
  if (n_examples <= 0)
    throw std::invalid_argument("synthetic dataset size must be positive");

  Dataset ds;
  ds.images = zeros({n_examples, 1, kSide, kSide});
  ds.labels.reserve(static_cast<std::size_t>(n_examples));
  ds.n_classes = 10;
  ds.split = split;

  Rng root(seed);
  double* px = ds.images.raw_data().data();

  for (std::int64_t i = 0; i < n_examples; ++i) {
    Rng rng = root.child("example", static_cast<std::uint64_t>(i));
    const int digit = static_cast<int>(rng.uniform_int(10));
    ds.labels.push_back(digit);

    const int variant = static_cast<int>(rng.uniform_int(3));
    const GlyphGrid grid = build_glyph(digit, variant, rng);

    // Inverse affine map from image pixels back to glyph cells. Digits are
    // drawn large, centered, and with saturated ink: class evidence spreads
    // over many redundant stroke pixels, the way pen-on-paper digits look
    // after size normalization. Difficulty comes from the style variants,
    // broken strokes, and geometric warps rather than from speckle.
    const double scale = rng.uniform(2.9, 3.8);
    const double theta = rng.uniform(-0.25, 0.25);
    const double shear = rng.uniform(-0.20, 0.20);
    const double tx = rng.uniform(-1.5, 1.5);
    const double ty = rng.uniform(-1.2, 1.2);
    const double thickness = rng.uniform(0.0, 0.55);
    // Low-frequency sinusoidal warp stands in for wobbly pen strokes.
    const double wobble_ax = rng.uniform(0.0, 0.45);
    const double wobble_ay = rng.uniform(0.0, 0.45);
    const double wobble_wx = rng.uniform(0.2, 0.6);
    const double wobble_wy = rng.uniform(0.2, 0.6);
    const double wobble_px = rng.uniform(0.0, 6.283185307179586);
    const double wobble_py = rng.uniform(0.0, 6.283185307179586);
    const double ink = rng.uniform(0.85, 1.0);
    const double contrast = rng.uniform(0.9, 1.15);
    const double noise_amp = rng.uniform(0.01, 0.05);

    // A single faint smudge on a fifth of the images.
    const bool smudged = rng.uniform(0.0, 1.0) < 0.2;
    const double blob_x = rng.uniform(2.0, kSide - 2.0);
    const double blob_y = rng.uniform(2.0, kSide - 2.0);
    const double blob_r = rng.uniform(0.6, 1.5);
    const double blob_ink = rng.uniform(0.08, 0.20);

    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);
    const double cx = kSide / 2.0 + tx;
    const double cy = kSide / 2.0 + ty;

    double* img = px + static_cast<std::size_t>(i) * kSide * kSide;
    for (std::int64_t r = 0; r < kSide; ++r) {
      for (std::int64_t c = 0; c < kSide; ++c) {
        // 2x2 supersampling softens the glyph edges so that nearby classes
        // are not separable from single pixels alone.
        double cover = 0.0;
        for (int sy = 0; sy < 2; ++sy) {
          for (int sx = 0; sx < 2; ++sx) {
            double x = c + 0.25 + 0.5 * sx - cx;
            double y = r + 0.25 + 0.5 * sy - cy;
            x += wobble_ax * std::sin(wobble_wy * y + wobble_px);
            y += wobble_ay * std::sin(wobble_wx * x + wobble_py);
            const double ux = (cos_t * x + sin_t * y) / scale;
            const double uy = (-sin_t * x + cos_t * y) / scale;
            const double gx = ux - shear * uy + kGlyphW / 2.0;
            const double gy = uy + kGlyphH / 2.0;
            if (inked(grid, gx, gy, thickness)) cover += 0.25;
          }
        }
        double v = std::pow(ink * cover, contrast);
        if (smudged) {
          const double dx = c + 0.5 - blob_x;
          const double dy = r + 0.5 - blob_y;
          const double falloff = 1.0 - (dx * dx + dy * dy) / (blob_r * blob_r);
          if (falloff > 0.0) v += blob_ink * falloff;
        }
        v += rng.uniform(0.0, noise_amp);
        if (v < 0.0) v = 0.0;
        if (v > 1.0) v = 1.0;
        img[r * kSide + c] = std::llround(v * 255.0) / 255.0;
      }
    }
  }
  return ds;
}

}  // namespace cldl
