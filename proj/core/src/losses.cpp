#include "rvsl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "rvsl/errors.hpp"

namespace rvsl::loss {
namespace {

void same_shape(Var a, Var b, const char* who) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(who) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void image_batch(Var x, const char* who) {
  if (x.shape().size() != 4 || x.shape()[0] == 0) {
    throw ShapeError(std::string(who) + ": expected a non-empty N x C x H x W batch, got " + shape_str(x.shape()));
  }
}

Var one_minus(Var x) { return ad::add_scalar(ad::mul_scalar(x, -1.0), 1.0); }

Var l1_mean(Var a, Var b, const char* who) {
  same_shape(a, b, who);
  if (a.shape().empty() || a.shape()[0] == 0) throw ShapeError(std::string(who) + ": empty batch");
  return ad::mean(ad::abs(ad::sub(a, b)));
}

Var log_prob(Var p) { return ad::log(ad::clamp(p, kProbClamp, 1.0 - kProbClamp)); }

}  // namespace

void LossWeights::validate() const {
  for (const char* k : {"dts", "rc", "midc", "cr", "dis", "dc", "tv", "tri", "id", "ec"}) {
    const double v = of(k);
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string("loss weight ") + k + " must be >= 0");
  }
}

double LossWeights::of(std::string_view part) const {
  if (part == "dts") return dts;
  if (part == "rc") return rc;
  if (part == "midc") return midc;
  if (part == "cr") return cr;
  if (part == "dis") return dis;
  if (part == "dc") return dc;
  if (part == "tv") return tv;
  if (part == "tri") return tri;
  if (part == "id") return id;
  if (part == "ec") return ec;
  throw std::invalid_argument("unknown loss part " + std::string(part));
}

void TripletConfig::validate() const {
  if (!(margin > 0.0)) throw std::invalid_argument("triplet margin must be > 0");
}

Var l_domain_transform(Var pred, Var target) { return l1_mean(pred, target, "l_domain_transform"); }

Var l_render_consistency(Var input, Var cycled) { return l1_mean(input, cycled, "l_render_consistency"); }

Tensor midc_mask(const Tensor& clear_dc, const Tensor& hazy_dc) {
  if (clear_dc.shape() != hazy_dc.shape()) throw ShapeError("midc_mask: dark channel shapes differ");
  Tensor dm(clear_dc.shape());
  for (std::size_t i = 0; i < dm.size(); ++i) dm[i] = hazy_dc[i] < clear_dc[i] ? 1.0 : 0.0;
  return dm;
}

Var l_midc(Var clear, Var rendered_hazy, const haze::DarkChannelConfig& cfg, double* dm_fraction) {
  same_shape(clear, rendered_hazy, "l_midc");
  image_batch(clear, "l_midc");
  cfg.validate();
  Var dc_c = ad::dark_channel(clear, cfg.patch);
  Var dc_h = ad::dark_channel(rendered_hazy, cfg.patch);
  Tensor dm = midc_mask(dc_c.value(), dc_h.value());
  if (dm_fraction != nullptr) *dm_fraction = dm.sum() / static_cast<double>(dm.size());
  Var mask = clear.graph().constant(std::move(dm));
  return ad::mean(ad::mul(mask, ad::abs(ad::sub(dc_h, dc_c))));
}

Var l_colinear(Var clear, Var rendered_hazy, const haze::DarkChannelConfig& cfg) {
  image_batch(rendered_hazy, "l_colinear");
  std::vector<haze::Rgb> airlights;
  const std::size_t N = rendered_hazy.shape()[0];
  for (std::size_t i = 0; i < N; ++i) airlights.push_back(haze::estimate_airlight(unstack(rendered_hazy.value(), i), cfg));
  return l_colinear(clear, rendered_hazy, airlights);
}

Var l_colinear(Var clear, Var rendered_hazy, const std::vector<haze::Rgb>& airlights) {
  same_shape(clear, rendered_hazy, "l_colinear");
  image_batch(clear, "l_colinear");
  const Shape s = clear.shape();
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  if (C != 3) throw ShapeError("l_colinear: expected RGB batches");
  if (airlights.size() != N) throw ShapeError("l_colinear: one airlight per image required");

  ad::Graph& g = clear.graph();
  Tensor field(s);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < 3; ++c) std::fill_n(field.raw() + (n * 3 + c) * HW, HW, airlights[n][c]);
  }
  Var a = g.constant(field);
  Var u = ad::sub(clear, a);
  Var v = ad::sub(rendered_hazy, a);

  // Pixels where either difference vanishes have no direction; they are left
  // out of the per-image mean.
  Tensor weight({N, s[2], s[3]}, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t valid = 0;
    for (std::size_t p = 0; p < HW; ++p) {
      double nu = 0.0, nv = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t i = (n * 3 + c) * HW + p;
        nu += u.value()[i] * u.value()[i];
        nv += v.value()[i] * v.value()[i];
      }
      const bool ok = std::sqrt(nu) >= haze::kDegenerateNorm && std::sqrt(nv) >= haze::kDegenerateNorm;
      weight[n * HW + p] = ok ? 1.0 : 0.0;
      valid += ok ? 1 : 0;
    }
    for (std::size_t p = 0; p < HW; ++p) {
      weight[n * HW + p] = valid == 0 ? 0.0 : weight[n * HW + p] / static_cast<double>(valid * N);
    }
  }
  Var cos = ad::sum(ad::mul(ad::l2_normalize(u, 1, haze::kDegenerateNorm), ad::l2_normalize(v, 1, haze::kDegenerateNorm)), 1);
  return ad::sum(ad::mul(g.constant(std::move(weight)), one_minus(cos)));
}

Var discriminator_loss(Var p_real, Var p_fake) {
  Var real_term = ad::mean(log_prob(p_real));
  Var fake_term = ad::mean(ad::log(ad::clamp(one_minus(p_fake), kProbClamp, 1.0 - kProbClamp)));
  return ad::mul_scalar(ad::add(real_term, fake_term), -1.0);
}

Var generator_loss(Var p_fake) {
  return ad::mean(ad::log(ad::clamp(one_minus(p_fake), kProbClamp, 1.0 - kProbClamp)));
}

AdversarialLosses l_discriminative(ad::Graph& g, net::Block& disc, const net::NetConfig& cfg, Var real, Var fake) {
  Var p_real = net::discriminate(g, disc, cfg, real);
  Var p_fake_detached = net::discriminate(g, disc, cfg, ad::clamp_stopgrad(fake));
  Var p_fake = net::discriminate(g, disc, cfg, fake);
  return {discriminator_loss(p_real, p_fake_detached), generator_loss(p_fake)};
}

Var l_dark_channel(Var rendered_clear, const haze::DarkChannelConfig& cfg) {
  image_batch(rendered_clear, "l_dark_channel");
  cfg.validate();
  return ad::mean(ad::dark_channel(rendered_clear, cfg.patch));
}

Var l_total_variation(Var x) {
  image_batch(x, "l_total_variation");
  const Shape s = x.shape();
  const std::size_t H = s[2], W = s[3];
  if (H < 2 || W < 2) throw ShapeError("l_total_variation: spatial dims must be >= 2");
  Var dx = ad::sub(ad::slice(x, 0, H, 1, W), ad::slice(x, 0, H, 0, W - 1));
  Var dy = ad::sub(ad::slice(x, 1, H, 0, W), ad::slice(x, 0, H - 1, 0, W));
  Var total = ad::add(ad::sum(ad::abs(dx)), ad::sum(ad::abs(dy)));
  return ad::mul_scalar(total, 1.0 / static_cast<double>(s[0] * H * W));
}

Mining mine_batch_hard(const Tensor& d, const std::vector<std::uint32_t>& labels) {
  const std::size_t N = labels.size();
  if (d.shape() != Shape{N, N}) throw ShapeError("mine_batch_hard: distance matrix must be N x N");
  std::map<std::uint32_t, std::size_t> counts;
  for (std::uint32_t l : labels) ++counts[l];
  if (counts.size() < 2) throw std::invalid_argument("triplet loss needs at least 2 distinct labels in the batch");
  for (const auto& [label, c] : counts) {
    if (c < 2) throw std::invalid_argument("triplet loss: label " + std::to_string(label) + " has a single sample");
  }
  Mining m;
  for (std::size_t i = 0; i < N; ++i) {
    std::size_t pos = N, neg = N;
    for (std::size_t j = 0; j < N; ++j) {
      const double v = d[i * N + j];
      if (labels[j] == labels[i]) {
        if (j != i && (pos == N || v > d[i * N + pos])) pos = j;
      } else if (neg == N || v < d[i * N + neg]) {
        neg = j;
      }
    }
    m.positive.push_back(pos);
    m.negative.push_back(neg);
  }
  return m;
}

Var l_triplet_batch_hard(Var embeddings, const std::vector<std::uint32_t>& labels, const TripletConfig& cfg) {
  cfg.validate();
  if (embeddings.shape().size() != 2 || embeddings.shape()[0] != labels.size()) {
    throw ShapeError("l_triplet_batch_hard: embeddings " + shape_str(embeddings.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t N = labels.size();
  Var d = ad::pairwise_distance(embeddings);
  const Mining m = mine_batch_hard(d.value(), labels);
  std::vector<std::size_t> pos(N), neg(N);
  for (std::size_t i = 0; i < N; ++i) {
    pos[i] = i * N + m.positive[i];
    neg[i] = i * N + m.negative[i];
  }
  Var hinge = ad::relu(ad::add_scalar(ad::sub(ad::gather(d, pos), ad::gather(d, neg)), cfg.margin));
  return ad::mean(hinge);
}

Var l_id_cross_entropy(Var logits, const std::vector<std::uint32_t>& labels) {
  const Shape s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    throw ShapeError("l_id_cross_entropy: logits " + shape_str(s) + " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t C = s[1];
  std::vector<std::size_t> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= C) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(C) + ")");
    }
    idx[i] = i * C + labels[i];
  }
  return ad::mul_scalar(ad::mean(ad::gather(ad::log_softmax(logits), idx)), -1.0);
}

Var l_embedding_consistency(Var a, Var b) { return l1_mean(a, b, "l_embedding_consistency"); }

std::string_view to_string(Stage s) noexcept {
  switch (s) {
    case Stage::supervised: return "supervised";
    case Stage::unsup_clear: return "unsup_clear";
    case Stage::unsup_hazy: return "unsup_hazy";
  }
  return "?";
}

std::vector<std::string> required_parts(Stage stage, bool identity_supervision) {
  std::vector<std::string> parts;
  switch (stage) {
    case Stage::supervised: parts = {"dts", "tri", "id"}; break;
    case Stage::unsup_clear: parts = {"rc", "midc", "cr", "dis", "ec"}; break;
    case Stage::unsup_hazy: parts = {"rc", "dis", "dc", "tv", "ec"}; break;
  }
  if (identity_supervision && stage != Stage::supervised) {
    parts.push_back("tri");
    parts.push_back("id");
  }
  return parts;
}

Var compose_stage_loss(Stage stage, const std::map<std::string, Var>& parts, const LossWeights& w,
                       bool identity_supervision) {
  w.validate();
  const std::vector<std::string> need = required_parts(stage, identity_supervision);
  const std::set<std::string> want(need.begin(), need.end());
  for (const auto& [key, v] : parts) {
    if (!want.contains(key)) {
      throw std::invalid_argument("stage " + std::string(to_string(stage)) + " does not take loss part '" + key + "'");
    }
  }
  Var total;
  for (const std::string& key : need) {
    auto it = parts.find(key);
    if (it == parts.end()) {
      throw std::invalid_argument("stage " + std::string(to_string(stage)) + " is missing loss part '" + key + "'");
    }
    if (it->second.shape() != Shape{}) throw ShapeError("loss part '" + key + "' is not a scalar");
    Var term = ad::mul_scalar(it->second, w.of(key));
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

}  // namespace rvsl::loss
