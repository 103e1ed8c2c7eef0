#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cxrclip/rng.hpp"

namespace cxrclip {

// Single-channel image, row-major, intensities in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
  double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
  bool empty() const { return height <= 0 || width <= 0; }

  friend bool operator==(const Image&, const Image&) = default;
};

// Bilinear sample with edge replication outside the grid.
double sample_bilinear(const Image& img, double y, double x);

Image resize_bilinear(const Image& img, int out_h, int out_w);

// Resamples the window [top, top+h) x [left, left+w) (in pixel units, may
// extend past the borders) to out_h x out_w. Out-of-range reads replicate
// the nearest edge pixel.
Image crop_resize(const Image& img, double top, double left, double h, double w, int out_h,
                  int out_w);

struct ClaheConfig {
  int tiles_y = 2;
  int tiles_x = 2;
  double clip_limit = 0.01;  // fraction of tile pixels per bin
  int bins = 255;
};

// Per-tile mapping table: value of bin k after clipping, redistribution
// and mid-rank CDF normalization.
std::vector<double> clahe_tile_mapping(const std::vector<int>& histogram, double clip_limit,
                                       std::size_t tile_pixels);

int clahe_bin(double value, int bins);

// Contrast-limited tile equalization with bilinear blending between tile
// centres.
Image clahe(const Image& img, const ClaheConfig& cfg = {});

struct ImageAugConfig {
  std::pair<double, double> crop_scale_range{0.8, 1.1};
  double clahe_probability = 0.3;
  std::pair<double, double> brightness_range{0.9, 1.1};
  std::pair<double, double> contrast_range{0.8, 1.2};
  std::pair<double, double> hue_range{0.9, 1.1};
  std::pair<double, double> saturation_range{0.8, 1.2};
  int output_size = 32;
  ClaheConfig clahe;
};

void validate(const ImageAugConfig& cfg);

// Random resized crop (area scale, edge-replicated padding above 1.0),
// optional CLAHE, brightness multiply, contrast about the mean, clip.
Image augment_image(const Image& img, const ImageAugConfig& cfg, Rng& rng);

// Three-channel path used when colour data is present.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::array<double, 3>> pixels;
};

std::array<double, 3> rgb_to_hsv(const std::array<double, 3>& rgb);
std::array<double, 3> hsv_to_rgb(const std::array<double, 3>& hsv);

// Hue scaled (wrapping on the colour circle) and saturation scaled (clipped).
void jitter_hue_saturation(RgbImage& img, double hue_factor, double saturation_factor);

// Brightness, contrast, hue and saturation jitter in the configured ranges.
void color_jitter(RgbImage& img, const ImageAugConfig& cfg, Rng& rng);

// Portable graymap (P2 or P5, maxval up to 65535).
Image read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& img);

}  // namespace cxrclip
