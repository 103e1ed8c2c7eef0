#include "cxrclip/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cxrclip/errors.hpp"

namespace cxrclip {

namespace {

void require_valid(const Image& img) {
  if (img.empty() ||
      img.pixels.size() != static_cast<std::size_t>(img.height) * static_cast<std::size_t>(img.width)) {
    throw BadImage("image has degenerate dimensions");
  }
}

double lerp(double a, double b, double t) { return a + t * (b - a); }

void check_range(const std::pair<double, double>& r, const char* name) {
  if (!(r.first <= 1.0 && 1.0 <= r.second) || !(r.first > 0.0)) {
    throw ConfigError(std::string(name) + " must be a positive range containing 1.0");
  }
}

}  // namespace

double sample_bilinear(const Image& img, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const double ty = y - y0;
  const double tx = x - x0;
  return lerp(lerp(img.at(y0, x0), img.at(y0, x1), tx), lerp(img.at(y1, x0), img.at(y1, x1), tx), ty);
}

Image crop_resize(const Image& img, double top, double left, double h, double w, int out_h,
                  int out_w) {
  require_valid(img);
  if (out_h <= 0 || out_w <= 0 || !(h > 0.0) || !(w > 0.0)) {
    throw BadImage("crop window or output size is empty");
  }
  Image out(out_h, out_w);
  const double sy = h / out_h;
  const double sx = w / out_w;
  for (int r = 0; r < out_h; ++r) {
    // pixel-centre alignment
    const double y = top + (r + 0.5) * sy - 0.5;
    for (int c = 0; c < out_w; ++c) {
      const double x = left + (c + 0.5) * sx - 0.5;
      out.at(r, c) = sample_bilinear(img, y, x);
    }
  }
  return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  require_valid(img);
  if (img.height == out_h && img.width == out_w) return img;
  return crop_resize(img, 0.0, 0.0, img.height, img.width, out_h, out_w);
}

int clahe_bin(double value, int bins) {
  const int k = static_cast<int>(std::lround(std::clamp(value, 0.0, 1.0) * (bins - 1)));
  return std::clamp(k, 0, bins - 1);
}

std::vector<double> clahe_tile_mapping(const std::vector<int>& histogram, double clip_limit,
                                       std::size_t tile_pixels) {
  const std::size_t bins = histogram.size();
  const double mass = static_cast<double>(tile_pixels);
  const double limit = std::max(1.0, clip_limit * mass);
  std::vector<double> h(bins);
  double excess = 0.0;
  for (std::size_t k = 0; k < bins; ++k) {
    const double count = histogram[k];
    h[k] = std::min(count, limit);
    excess += count - h[k];
  }
  const double share = excess / static_cast<double>(bins);
  std::vector<double> mapping(bins);
  double below = 0.0;
  for (std::size_t k = 0; k < bins; ++k) {
    const double hk = h[k] + share;
    mapping[k] = (below + 0.5 * hk) / mass;
    below += hk;
  }
  return mapping;
}

Image clahe(const Image& img, const ClaheConfig& cfg) {
  require_valid(img);
  if (cfg.tiles_y < 1 || cfg.tiles_x < 1 || cfg.bins < 2) throw BadImage("bad CLAHE configuration");
  const int ty_n = std::min(cfg.tiles_y, img.height);
  const int tx_n = std::min(cfg.tiles_x, img.width);

  std::vector<int> row_start(ty_n + 1), col_start(tx_n + 1);
  for (int t = 0; t <= ty_n; ++t) row_start[t] = t * img.height / ty_n;
  for (int t = 0; t <= tx_n; ++t) col_start[t] = t * img.width / tx_n;

  std::vector<std::vector<double>> maps(static_cast<std::size_t>(ty_n * tx_n));
  for (int ty = 0; ty < ty_n; ++ty) {
    for (int tx = 0; tx < tx_n; ++tx) {
      std::vector<int> hist(cfg.bins, 0);
      for (int r = row_start[ty]; r < row_start[ty + 1]; ++r) {
        for (int c = col_start[tx]; c < col_start[tx + 1]; ++c) ++hist[clahe_bin(img.at(r, c), cfg.bins)];
      }
      const std::size_t n = static_cast<std::size_t>(row_start[ty + 1] - row_start[ty]) *
                            static_cast<std::size_t>(col_start[tx + 1] - col_start[tx]);
      maps[static_cast<std::size_t>(ty * tx_n + tx)] = clahe_tile_mapping(hist, cfg.clip_limit, n);
    }
  }

  auto centre = [](const std::vector<int>& start, int t) { return 0.5 * (start[t] + start[t + 1]) - 0.5; };
  // Neighbouring tile indices and blend weight along one axis.
  auto locate = [&](const std::vector<int>& start, int tiles, double pos, int& t0, int& t1, double& w) {
    t0 = 0;
    while (t0 + 1 < tiles && centre(start, t0 + 1) <= pos) ++t0;
    t1 = std::min(t0 + 1, tiles - 1);
    if (t1 == t0) {
      w = 0.0;
      return;
    }
    w = std::clamp((pos - centre(start, t0)) / (centre(start, t1) - centre(start, t0)), 0.0, 1.0);
  };

  Image out(img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    int y0, y1;
    double wy;
    locate(row_start, ty_n, r, y0, y1, wy);
    for (int c = 0; c < img.width; ++c) {
      int x0, x1;
      double wx;
      locate(col_start, tx_n, c, x0, x1, wx);
      const int k = clahe_bin(img.at(r, c), cfg.bins);
      auto m = [&](int ty, int tx) { return maps[static_cast<std::size_t>(ty * tx_n + tx)][k]; };
      out.at(r, c) = lerp(lerp(m(y0, x0), m(y0, x1), wx), lerp(m(y1, x0), m(y1, x1), wx), wy);
    }
  }
  return out;
}

void validate(const ImageAugConfig& cfg) {
  check_range(cfg.crop_scale_range, "crop_scale_range");
  check_range(cfg.brightness_range, "brightness_range");
  check_range(cfg.contrast_range, "contrast_range");
  check_range(cfg.hue_range, "hue_range");
  check_range(cfg.saturation_range, "saturation_range");
  if (!(cfg.clahe_probability >= 0.0 && cfg.clahe_probability <= 1.0)) {
    throw ConfigError("clahe_probability must lie in [0, 1]");
  }
  if (cfg.output_size < 1) throw ConfigError("output_size must be positive");
}

Image augment_image(const Image& img, const ImageAugConfig& cfg, Rng& rng) {
  require_valid(img);
  for (double v : img.pixels) {
    if (!(v >= 0.0 && v <= 1.0)) throw BadImage("intensity outside [0, 1]");
  }
  const int size = cfg.output_size;

  // Area scale s keeps the aspect ratio; s > 1 reads past the borders,
  // which replicates the edge pixels.
  const double scale = rng.uniform(cfg.crop_scale_range.first, cfg.crop_scale_range.second);
  const double side = std::sqrt(scale);
  const double h = side * img.height;
  const double w = side * img.width;
  const double top = rng.uniform() * (img.height - h);
  const double left = rng.uniform() * (img.width - w);
  Image out = crop_resize(img, top, left, h, w, size, size);

  if (rng.bernoulli(cfg.clahe_probability)) out = clahe(out, cfg.clahe);

  const double brightness = rng.uniform(cfg.brightness_range.first, cfg.brightness_range.second);
  for (double& v : out.pixels) v *= brightness;

  const double contrast = rng.uniform(cfg.contrast_range.first, cfg.contrast_range.second);
  double mean = 0.0;
  for (double v : out.pixels) mean += v;
  mean /= static_cast<double>(out.pixels.size());
  for (double& v : out.pixels) v = std::clamp(mean + contrast * (v - mean), 0.0, 1.0);

  return out;
}

std::array<double, 3> rgb_to_hsv(const std::array<double, 3>& rgb) {
  const auto [r, g, b] = rgb;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  double hue = 0.0;
  if (delta > 0.0) {
    if (mx == r) {
      hue = std::fmod((g - b) / delta, 6.0);
    } else if (mx == g) {
      hue = (b - r) / delta + 2.0;
    } else {
      hue = (r - g) / delta + 4.0;
    }
    hue /= 6.0;
    if (hue < 0.0) hue += 1.0;
  }
  const double sat = mx > 0.0 ? delta / mx : 0.0;
  return {hue, sat, mx};
}

std::array<double, 3> hsv_to_rgb(const std::array<double, 3>& hsv) {
  const auto [h, s, v] = hsv;
  const double c = v * s;
  const double hp = std::fmod(h, 1.0) * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  const double m = v - c;
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  return {r + m, g + m, b + m};
}

void jitter_hue_saturation(RgbImage& img, double hue_factor, double saturation_factor) {
  for (auto& px : img.pixels) {
    auto hsv = rgb_to_hsv(px);
    hsv[0] = std::fmod(hsv[0] * hue_factor, 1.0);
    hsv[1] = std::clamp(hsv[1] * saturation_factor, 0.0, 1.0);
    px = hsv_to_rgb(hsv);
  }
}

void color_jitter(RgbImage& img, const ImageAugConfig& cfg, Rng& rng) {
  const double brightness = rng.uniform(cfg.brightness_range.first, cfg.brightness_range.second);
  const double contrast = rng.uniform(cfg.contrast_range.first, cfg.contrast_range.second);
  const double hue = rng.uniform(cfg.hue_range.first, cfg.hue_range.second);
  const double sat = rng.uniform(cfg.saturation_range.first, cfg.saturation_range.second);
  std::array<double, 3> mean{0, 0, 0};
  for (const auto& px : img.pixels) {
    for (int ch = 0; ch < 3; ++ch) mean[ch] += px[ch] * brightness;
  }
  for (double& m : mean) m /= static_cast<double>(std::max<std::size_t>(1, img.pixels.size()));
  for (auto& px : img.pixels) {
    for (int ch = 0; ch < 3; ++ch) {
      px[ch] = std::clamp(mean[ch] + contrast * (px[ch] * brightness - mean[ch]), 0.0, 1.0);
    }
  }
  jitter_hue_saturation(img, hue, sat);
}

// ---- PGM ---------------------------------------------------------------

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

int parse_header_int(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = next_token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError("bad PGM header in " + path.string());
  }
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  const std::string magic = next_token(in);
  if (magic != "P2" && magic != "P5") throw DataError("not a PGM file: " + path.string());
  const int width = parse_header_int(in, path);
  const int height = parse_header_int(in, path);
  const int maxval = parse_header_int(in, path);
  if (maxval > 65535) throw DataError("PGM maxval too large in " + path.string());
  Image img(height, width);
  const std::size_t n = img.pixels.size();
  if (magic == "P5") {
    const int bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(n * static_cast<std::size_t>(bytes));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw DataError("truncated PGM " + path.string());
    for (std::size_t i = 0; i < n; ++i) {
      const int v = bytes == 1 ? raw[i] : (raw[2 * i] << 8) | raw[2 * i + 1];
      img.pixels[i] = static_cast<double>(v) / maxval;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::string tok = next_token(in);
      if (tok.empty()) throw DataError("truncated PGM " + path.string());
      img.pixels[i] = std::clamp(std::stod(tok) / maxval, 0.0, 1.0);
    }
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Image& img) {
  require_valid(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

}  // namespace cxrclip
