#include "rvsl/haze.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvsl/errors.hpp"

namespace rvsl::haze {
namespace {

void require_image(const Tensor& img, const char* what) {
  if (img.rank() != 3 || img.dim(0) != 3) {
    throw ShapeError(std::string(what) + ": expected 3xHxW image, got " + shape_str(img.shape()));
  }
}

void require_map_for(const Tensor& map, const Tensor& img, const char* what) {
  if (map.rank() != 2 || map.dim(0) != img.dim(1) || map.dim(1) != img.dim(2)) {
    throw ShapeError(std::string(what) + ": map " + shape_str(map.shape()) + " does not match image " +
                     shape_str(img.shape()));
  }
}

// Sliding-window minimum along one axis with truncated borders.
void window_min_1d(const double* src, double* dst, std::size_t n, std::size_t stride, std::size_t radius) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= radius ? i - radius : 0;
    const std::size_t hi = std::min(n - 1, i + radius);
    double m = src[lo * stride];
    for (std::size_t j = lo + 1; j <= hi; ++j) m = std::min(m, src[j * stride]);
    dst[i * stride] = m;
  }
}

}  // namespace

void HazeParams::validate() const {
  if (!(beta >= kMinBeta && beta <= kMaxBeta)) {
    throw std::invalid_argument("beta " + std::to_string(beta) + " outside [0.05, 5]");
  }
  for (double a : airlight) {
    if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("airlight channel outside [0, 1]");
  }
}

void DarkChannelConfig::validate() const {
  if (patch == 0 || patch % 2 == 0) {
    throw std::invalid_argument("dark channel patch must be odd and positive, got " + std::to_string(patch));
  }
}

Tensor transmission_from_depth(const Tensor& depth, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (depth.rank() != 2) throw ShapeError("depth must be HxW, got " + shape_str(depth.shape()));
  Tensor t(depth.shape());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (!(depth[i] >= 0.0) || !std::isfinite(depth[i])) {
      throw std::invalid_argument("depth must be finite and non-negative");
    }
    t[i] = std::exp(-beta * depth[i]);
  }
  return t;
}

Tensor synthesize_haze(const Tensor& clear, const Tensor& t, const HazeParams& params) {
  require_image(clear, "synthesize_haze");
  require_map_for(t, clear, "synthesize_haze");
  const std::size_t hw = t.size();
  Tensor out(clear.shape());
  for (std::size_t c = 0; c < 3; ++c) {
    const double a = params.airlight[c];
    for (std::size_t p = 0; p < hw; ++p) {
      out[c * hw + p] = clear[c * hw + p] * t[p] + a * (1.0 - t[p]);
    }
  }
  return out;
}

Tensor synthesize_haze(const Tensor& clear, const Tensor& t, const Tensor& airlight_field) {
  require_image(clear, "synthesize_haze");
  require_map_for(t, clear, "synthesize_haze");
  if (airlight_field.shape() != clear.shape()) {
    throw ShapeError("synthesize_haze: airlight field " + shape_str(airlight_field.shape()) +
                     " does not match image " + shape_str(clear.shape()));
  }
  const std::size_t hw = t.size();
  Tensor out(clear.shape());
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t i = c * hw + p;
      out[i] = clear[i] * t[p] + airlight_field[i] * (1.0 - t[p]);
    }
  }
  return out;
}

Dehazed invert_haze(const Tensor& hazy, const Tensor& t, const HazeParams& params, double t_min) {
  require_image(hazy, "invert_haze");
  require_map_for(t, hazy, "invert_haze");
  if (!(t_min > 0.0)) throw std::invalid_argument("t_min must be positive");
  const std::size_t hw = t.size();
  Dehazed result{Tensor(hazy.shape()), 0};
  for (std::size_t p = 0; p < hw; ++p) {
    double tp = t[p];
    if (tp < t_min) {
      tp = t_min;
      ++result.clamped_pixels;
    }
    for (std::size_t c = 0; c < 3; ++c) {
      const double a = params.airlight[c];
      const double j = (hazy[c * hw + p] - a * (1.0 - tp)) / tp;
      result.image[c * hw + p] = std::clamp(j, 0.0, 1.0);
    }
  }
  return result;
}

Tensor dark_channel(const Tensor& image, const DarkChannelConfig& cfg) {
  require_image(image, "dark_channel");
  cfg.validate();
  const std::size_t H = image.dim(1), W = image.dim(2);
  if (cfg.patch > H && cfg.patch > W) {
    throw std::invalid_argument("dark_channel: patch " + std::to_string(cfg.patch) +
                                " larger than both image dims " + shape_str(image.shape()));
  }
  Tensor chmin({H, W});
  for (std::size_t p = 0; p < H * W; ++p) {
    chmin[p] = std::min({image[p], image[H * W + p], image[2 * H * W + p]});
  }
  // Window min over a rectangle factors into a row pass then a column pass.
  const std::size_t r = cfg.patch / 2;
  Tensor rows({H, W});
  for (std::size_t y = 0; y < H; ++y) window_min_1d(chmin.raw() + y * W, rows.raw() + y * W, W, 1, r);
  Tensor out({H, W});
  for (std::size_t x = 0; x < W; ++x) window_min_1d(rows.raw() + x, out.raw() + x, H, W, r);
  return out;
}

Rgb estimate_airlight(const Tensor& hazy, const DarkChannelConfig& cfg) {
  require_image(hazy, "estimate_airlight");
  const Tensor dc = dark_channel(hazy, cfg);
  const std::size_t hw = dc.size();
  const std::size_t top = std::max<std::size_t>(1, hw / 1000);
  std::vector<std::size_t> order(hw);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dc[a] > dc[b]; });
  order.resize(top);
  auto luminance = [&](std::size_t p) {
    return 0.299 * hazy[p] + 0.587 * hazy[hw + p] + 0.114 * hazy[2 * hw + p];
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return luminance(a) > luminance(b); });
  const std::size_t keep = std::max<std::size_t>(1, top / 2);
  Rgb a{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < keep; ++i) {
    for (std::size_t c = 0; c < 3; ++c) a[c] += hazy[c * hw + order[i]];
  }
  for (double& v : a) v = std::clamp(v / static_cast<double>(keep), 0.0, 1.0);
  return a;
}

Tensor colinearity_residual(const Tensor& clear, const Tensor& hazy, const Rgb& airlight) {
  require_image(clear, "colinearity_residual");
  if (hazy.shape() != clear.shape()) {
    throw ShapeError("colinearity_residual: shapes " + shape_str(clear.shape()) + " vs " +
                     shape_str(hazy.shape()));
  }
  const std::size_t H = clear.dim(1), W = clear.dim(2), hw = H * W;
  Tensor out({H, W}, 0.0);
  for (std::size_t p = 0; p < hw; ++p) {
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double u = clear[c * hw + p] - airlight[c];
      const double v = hazy[c * hw + p] - airlight[c];
      dot += u * v;
      nu += u * u;
      nv += v * v;
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    if (nu < kDegenerateNorm || nv < kDegenerateNorm) continue;
    out[p] = std::clamp(1.0 - dot / (nu * nv), 0.0, 2.0);
  }
  return out;
}

}  // namespace rvsl::haze
