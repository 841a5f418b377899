#pragma once

// Brute-force reference implementations. Each one is written from the
// definition with plain loops and shares no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "rvsl/tensor.hpp"

namespace oracle {

using rvsl::Shape;
using rvsl::Tensor;

// Image is C x H x W; returns H x W.
inline Tensor dark_channel(const Tensor& img, std::size_t patch) {
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const long r = static_cast<long>(patch / 2);
  Tensor out({H, W});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double m = std::numeric_limits<double>::infinity();
      for (long dy = -r; dy <= r; ++dy) {
        for (long dx = -r; dx <= r; ++dx) {
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
          for (std::size_t c = 0; c < C; ++c) m = std::min(m, img[(c * H + yy) * W + xx]);
        }
      }
      out[y * W + x] = m;
    }
  }
  return out;
}

inline double euclid(const Tensor& e, std::size_t i, std::size_t j) {
  const std::size_t D = e.dim(1);
  double s = 0.0;
  for (std::size_t d = 0; d < D; ++d) {
    const double diff = e[i * D + d] - e[j * D + d];
    s += diff * diff;
  }
  return std::sqrt(s);
}

// Batch-hard triplet loss over N x D embeddings.
inline double triplet(const Tensor& e, const std::vector<std::uint32_t>& labels, double margin) {
  const std::size_t N = labels.size();
  double total = 0.0;
  for (std::size_t a = 0; a < N; ++a) {
    double hardest_pos = -1.0, hardest_neg = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < N; ++j) {
      const double d = euclid(e, a, j);
      if (labels[j] == labels[a]) {
        if (j != a) hardest_pos = std::max(hardest_pos, d);
      } else {
        hardest_neg = std::min(hardest_neg, d);
      }
    }
    total += std::max(0.0, hardest_pos - hardest_neg + margin);
  }
  return total / static_cast<double>(N);
}

struct Retrieval {
  double mAP = 0.0;
  std::vector<double> cmc;  // cmc[r-1]
  std::size_t excluded = 0;
};

// Rank of gallery item g for a probe row: items strictly closer, or equally
// close at a lower position, come first. No sorting involved.
inline std::size_t rank_of(const std::vector<double>& row, std::size_t g) {
  std::size_t r = 1;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (row[j] < row[g] || (row[j] == row[g] && j < g)) ++r;
  }
  return r;
}

// dist is P x G. Probes without any relevant gallery item are excluded.
inline Retrieval retrieval(const Tensor& dist, const std::vector<std::uint32_t>& probe_ids,
                           const std::vector<std::uint32_t>& gallery_ids, std::size_t max_rank) {
  const std::size_t P = probe_ids.size(), G = gallery_ids.size();
  Retrieval out;
  out.cmc.assign(max_rank, 0.0);
  std::size_t counted = 0;
  for (std::size_t p = 0; p < P; ++p) {
    std::vector<double> row(dist.raw() + p * G, dist.raw() + (p + 1) * G);
    std::vector<std::size_t> relevant_ranks;
    for (std::size_t g = 0; g < G; ++g) {
      if (gallery_ids[g] == probe_ids[p]) relevant_ranks.push_back(rank_of(row, g));
    }
    if (relevant_ranks.empty()) {
      ++out.excluded;
      continue;
    }
    ++counted;
    // Precision at each relevant rank, visited from rank 1 upward.
    double ap = 0.0, hits = 0.0;
    for (std::size_t rk = 1; rk <= G; ++rk) {
      if (std::find(relevant_ranks.begin(), relevant_ranks.end(), rk) == relevant_ranks.end()) continue;
      hits += 1.0;
      ap += hits / static_cast<double>(rk);
    }
    out.mAP += ap / hits;
    const std::size_t first = *std::min_element(relevant_ranks.begin(), relevant_ranks.end());
    for (std::size_t r = first; r <= max_rank; ++r) out.cmc[r - 1] += 1.0;
  }
  if (counted) {
    out.mAP /= static_cast<double>(counted);
    for (double& c : out.cmc) c /= static_cast<double>(counted);
  }
  return out;
}

inline double mean_abs_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// Batch N x C x H x W: per image sum of |forward differences| / (H*W), batch mean.
inline double total_variation(const Tensor& x) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t xx = 0; xx < W; ++xx) {
          const double v = x.at({n, c, y, xx});
          if (xx + 1 < W) s += std::abs(x.at({n, c, y, xx + 1}) - v);
          if (y + 1 < H) s += std::abs(x.at({n, c, y + 1, xx}) - v);
        }
      }
    }
    total += s / static_cast<double>(H * W);
  }
  return total / static_cast<double>(N);
}

// Mean negative log-likelihood of softmax(logits) at the labels.
inline double cross_entropy(const Tensor& logits, const std::vector<std::uint32_t>& labels) {
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(logits[i * C + c]);
    total += std::log(z) - logits[i * C + labels[i]];
  }
  return total / static_cast<double>(N);
}

// Direct convolution, N x C x H x W with O x C x k x k weights.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), k = w.dim(2);
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
  Tensor out({N, O, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < Ho; ++y)
        for (std::size_t xx = 0; xx < Wo; ++xx) {
          double s = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                s += x.at({n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)}) * w.at({o, c, ky, kx});
              }
          out.at({n, o, y, xx}) = s;
        }
  return out;
}

}  // namespace oracle
