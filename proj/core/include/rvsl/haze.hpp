#pragma once

#include <array>
#include <cstddef>

#include "rvsl/tensor.hpp"

namespace rvsl::haze {

using Rgb = std::array<double, 3>;

/// Scattering coefficient and global atmospheric light of the Koschmieder
/// model I = J*t + A*(1 - t).
struct HazeParams {
  double beta = 1.0;
  Rgb airlight{1.0, 1.0, 1.0};

  static constexpr double kMinBeta = 0.05;
  static constexpr double kMaxBeta = 5.0;

  /// Throws std::invalid_argument when beta or airlight leave their ranges.
  void validate() const;
};

struct DarkChannelConfig {
  std::size_t patch = 5;
  void validate() const;
};

/// t(x) = exp(-beta * d(x)). `depth` is H x W, non-negative.
Tensor transmission_from_depth(const Tensor& depth, double beta);

/// I = J*t + A*(1-t) per channel. `clear` is 3 x H x W, `t` is H x W.
Tensor synthesize_haze(const Tensor& clear, const Tensor& t, const HazeParams& params);

/// Same as synthesize_haze with a per-pixel airlight field (3 x H x W).
Tensor synthesize_haze(const Tensor& clear, const Tensor& t, const Tensor& airlight_field);

struct Dehazed {
  Tensor image;
  /// Number of pixels whose transmission was raised to t_min.
  std::size_t clamped_pixels = 0;
};

/// Algebraic inverse J = (I - A(1-t)) / t with t floored at `t_min`, result
/// clamped to [0, 1].
Dehazed invert_haze(const Tensor& hazy, const Tensor& t, const HazeParams& params,
                    double t_min = 0.05);

/// Per-pixel min over channels, then min over the patch window; border
/// windows are truncated to the image. Returns H x W.
Tensor dark_channel(const Tensor& image, const DarkChannelConfig& cfg = {});

/// Dark-channel-prior airlight: mean colour of the brightest half of the
/// top 0.1% dark-channel pixels.
Rgb estimate_airlight(const Tensor& hazy, const DarkChannelConfig& cfg = {});

/// 1 - cos(clear(x) - A, hazy(x) - A) per pixel; pixels where either offset
/// has norm below 1e-6 yield 0. Returns H x W with values in [0, 2].
Tensor colinearity_residual(const Tensor& clear, const Tensor& hazy, const Rgb& airlight);

inline constexpr double kDegenerateNorm = 1e-6;

}  // namespace rvsl::haze
