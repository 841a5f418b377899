#include "rvsl/toyvehicle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "rvsl/errors.hpp"
#include "rvsl/image_io.hpp"
#include "rvsl/parallel.hpp"

namespace rvsl::data {
namespace {

using json = nlohmann::json;

// Stream tags for Rng::derive.
enum StreamTag : std::uint64_t {
  kIdentityStream = 1,
  kViewStream = 2,
  kHazeStream = 3,
  kSplitStream = 4,
  kSensorStream = 5,
};

struct Rgb3 {
  double r, g, b;
};

Rgb3 hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

class Canvas {
 public:
  explicit Canvas(std::size_t size) : n_(size), img_({3, size, size}), depth_({size, size}) {}

  std::size_t size() const { return n_; }
  void set(std::size_t y, std::size_t x, Rgb3 c, double d) {
    const std::size_t hw = n_ * n_, p = y * n_ + x;
    img_[p] = c.r;
    img_[hw + p] = c.g;
    img_[2 * hw + p] = c.b;
    depth_[p] = d;
  }
  void set_color(std::size_t y, std::size_t x, Rgb3 c) {
    const std::size_t hw = n_ * n_, p = y * n_ + x;
    img_[p] = c.r;
    img_[hw + p] = c.g;
    img_[2 * hw + p] = c.b;
  }
  // Pixel centres in normalized coordinates.
  double u(std::size_t x) const { return (static_cast<double>(x) + 0.5) / static_cast<double>(n_); }
  double v(std::size_t y) const { return (static_cast<double>(y) + 0.5) / static_cast<double>(n_); }

  template <typename Inside>
  void paint(Inside inside, Rgb3 color, double depth) {
    for (std::size_t y = 0; y < n_; ++y) {
      for (std::size_t x = 0; x < n_; ++x) {
        if (inside(u(x), v(y))) set(y, x, color, depth);
      }
    }
  }
  template <typename Inside>
  void tint(Inside inside, Rgb3 color) {
    for (std::size_t y = 0; y < n_; ++y) {
      for (std::size_t x = 0; x < n_; ++x) {
        if (inside(u(x), v(y))) set_color(y, x, color);
      }
    }
  }

  Rendered finish() {
    for (double& p : img_.data()) p = std::clamp(p, 0.0, 1.0);
    return {std::move(img_), std::move(depth_)};
  }

 private:
  std::size_t n_;
  Tensor img_;
  Tensor depth_;
};

Rgb3 scale(Rgb3 c, double s) { return {c.r * s, c.g * s, c.b * s}; }

// Applies the real-domain sensor model (gamma, noise) in place.
void apply_sensor(Tensor& img, Rng& rng, const HazeDistribution& dist) {
  const double gamma = dist.gamma_jitter > 0.0 ? rng.uniform(1.0 - dist.gamma_jitter, 1.0 + dist.gamma_jitter) : 1.0;
  for (double& p : img.data()) {
    double v = std::pow(std::clamp(p, 0.0, 1.0), gamma);
    if (dist.noise_sigma > 0.0) v += rng.normal(0.0, dist.noise_sigma);
    p = std::clamp(v, 0.0, 1.0);
  }
}

struct HazeDraw {
  haze::HazeParams params;
  double gradient = 0.0;
};

HazeDraw draw_haze(Rng& rng, const HazeDistribution& dist) {
  HazeDraw d;
  d.params.beta = rng.uniform(dist.beta_lo, dist.beta_hi);
  const double a = rng.uniform(dist.airlight_lo, dist.airlight_hi);
  for (double& c : d.params.airlight) {
    const double jitter = dist.chroma_jitter > 0.0 ? rng.uniform(-dist.chroma_jitter, dist.chroma_jitter) : 0.0;
    c = std::clamp(a + jitter, 0.0, 1.0);
  }
  d.gradient = dist.airlight_gradient > 0.0 ? rng.uniform(0.0, dist.airlight_gradient) : 0.0;
  return d;
}

Tensor render_haze(const Tensor& clear, const Tensor& depth, const HazeDraw& draw) {
  const Tensor t = haze::transmission_from_depth(depth, draw.params.beta);
  if (draw.gradient == 0.0) return haze::synthesize_haze(clear, t, draw.params);
  const std::size_t H = clear.dim(1), W = clear.dim(2);
  Tensor field(clear.shape());
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      // Brighter towards the top of the frame.
      const double ramp = 1.0 + draw.gradient * (0.5 - static_cast<double>(y) / static_cast<double>(H - 1));
      const double a = std::clamp(draw.params.airlight[c] * ramp, 0.0, 1.0);
      for (std::size_t x = 0; x < W; ++x) field[(c * H + y) * W + x] = a;
    }
  }
  return haze::synthesize_haze(clear, t, field);
}

std::optional<double> opt_double(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string_view to_string(Domain d) noexcept {
  switch (d) {
    case Domain::syn_clear: return "syn_clear";
    case Domain::syn_hazy: return "syn_hazy";
    case Domain::real_clear: return "real_clear";
    case Domain::real_hazy: return "real_hazy";
  }
  return "?";
}

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::probe: return "probe";
    case Split::gallery: return "gallery";
  }
  return "?";
}

Domain parse_domain(std::string_view s) {
  for (Domain d : {Domain::syn_clear, Domain::syn_hazy, Domain::real_clear, Domain::real_hazy}) {
    if (to_string(d) == s) return d;
  }
  throw FormatError("unknown domain '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  for (Split sp : {Split::train, Split::probe, Split::gallery}) {
    if (to_string(sp) == s) return sp;
  }
  throw FormatError("unknown split '" + std::string(s) + "'");
}

std::tuple<int, int, int, int, int, int> Identity::key() const {
  return {static_cast<int>(body_hue * 24.0) % 24, static_cast<int>((body_saturation - 0.35) / 0.15),
          static_cast<int>((body_value - 0.55) / 0.125), static_cast<int>((aspect - 2.0) / 0.3),
          wheel_layout, marking_pattern};
}

Identity generate_identity(Rng& rng, std::uint32_t id) {
  Identity v;
  v.id = id;
  v.body_hue = rng.uniform();
  v.body_saturation = rng.uniform(0.35, 0.95);
  v.body_value = rng.uniform(0.55, 0.8);
  v.aspect = rng.uniform(2.0, 3.2);
  v.wheel_layout = static_cast<int>(rng.below(3));
  v.marking_pattern = static_cast<int>(rng.below(6));
  return v;
}

std::vector<Identity> generate_identities(std::size_t count, std::uint32_t first_id, Rng& rng,
                                          std::vector<std::tuple<int, int, int, int, int, int>>& taken) {
  std::set<std::tuple<int, int, int, int, int, int>> used(taken.begin(), taken.end());
  std::vector<Identity> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto id = static_cast<std::uint32_t>(first_id + i);
    Identity v = generate_identity(rng, id);
    // Bounded resampling; the attribute space has ~10^4 cells.
    for (int attempt = 0; attempt < 1000 && used.contains(v.key()); ++attempt) v = generate_identity(rng, id);
    used.insert(v.key());
    taken.push_back(v.key());
    out.push_back(v);
  }
  return out;
}

Rendered render_instance(const Identity& identity, Rng& rng, const RenderConfig& cfg) {
  const double j = cfg.jitter;
  Canvas cv(cfg.image_size);

  const double illum = 1.0 + j * rng.uniform(-0.1, 0.1);
  const double horizon = 0.4 + j * rng.uniform(-0.05, 0.05);
  const double ground_tone = 0.38 + j * rng.uniform(-0.05, 0.05);
  const Rgb3 sky = scale({0.62, 0.70, 0.78}, illum);

  // Background: sky at the far plane, ground receding towards the horizon.
  for (std::size_t y = 0; y < cv.size(); ++y) {
    const double v = cv.v(y);
    for (std::size_t x = 0; x < cv.size(); ++x) {
      if (v < horizon) {
        cv.set(y, x, scale(sky, 1.0 - 0.15 * v), 1.0);
      } else {
        const double d = 1.0 - 0.4 * (v - horizon) / (1.0 - horizon);
        const double texture = j > 0.0 ? rng.uniform(-0.02, 0.02) : 0.0;
        const double g = (ground_tone + 0.1 * (v - horizon)) * illum + texture;
        cv.set(y, x, {g, g, g * 1.02}, d);
      }
    }
  }

  const double vehicle_depth = 0.3 + (j > 0.0 ? rng.uniform(0.0, 0.15) : 0.075);
  const double s = 1.0 + j * rng.uniform(-0.1, 0.1);
  const double cx = 0.5 + j * rng.uniform(-0.06, 0.06);
  const double base = 0.8 + j * rng.uniform(-0.04, 0.04);
  const double facing = (j > 0.0 && rng.bernoulli(0.5)) ? -1.0 : 1.0;
  const double hue = identity.body_hue + j * rng.uniform(-0.01, 0.01);

  const double w = 0.62 * s;
  const double h = w / identity.aspect;
  const double wheel_r = (identity.wheel_layout == 1 ? 0.13 : 0.1) * w;
  const double body_bottom = base - 0.45 * wheel_r;
  const double body_top = body_bottom - h;
  const double left = cx - w / 2.0, right = cx + w / 2.0;

  const Rgb3 body = scale(hsv_to_rgb(hue, identity.body_saturation, identity.body_value), illum);
  const Rgb3 glass = scale({0.16, 0.2, 0.26}, illum);
  const Rgb3 tyre{0.07, 0.07, 0.08};
  const Rgb3 hub = scale({0.7, 0.7, 0.72}, illum);
  const double lum = 0.299 * body.r + 0.587 * body.g + 0.114 * body.b;
  const Rgb3 mark = lum > 0.45 ? Rgb3{0.08, 0.08, 0.1} : scale({0.95, 0.95, 0.92}, illum);

  // Cabin trapezoid, shifted towards the front.
  const double cab_h = 0.75 * h;
  const double cab_shift = 0.06 * w * facing;
  const double cab_bottom_half = 0.3 * w, cab_top_half = 0.2 * w;
  cv.paint(
      [&](double u, double v) {
        if (v < body_top - cab_h || v >= body_top) return false;
        const double f = (body_top - v) / cab_h;
        const double half = cab_bottom_half + (cab_top_half - cab_bottom_half) * f;
        return std::abs(u - (cx - cab_shift)) <= half;
      },
      body, vehicle_depth);
  cv.tint(
      [&](double u, double v) {
        if (v < body_top - 0.8 * cab_h || v >= body_top - 0.1 * cab_h) return false;
        const double f = (body_top - v) / cab_h;
        const double half = cab_bottom_half + (cab_top_half - cab_bottom_half) * f - 0.03 * w;
        return std::abs(u - (cx - cab_shift)) <= half && std::abs(u - (cx - cab_shift)) > 0.015 * w;
      },
      glass);

  cv.paint([&](double u, double v) { return u >= left && u <= right && v >= body_top && v < body_bottom; }, body,
           vehicle_depth);

  switch (identity.marking_pattern) {
    case 1:  // horizontal stripe
      cv.tint(
          [&](double u, double v) {
            return u >= left && u <= right && std::abs(v - (body_top + 0.45 * h)) <= 0.09 * h;
          },
          mark);
      break;
    case 2:  // two vertical bands
      cv.tint(
          [&](double u, double v) {
            const double a = std::abs(u - (cx - 0.18 * w)), b = std::abs(u - (cx + 0.18 * w));
            return v >= body_top && v < body_bottom && std::min(a, b) <= 0.05 * w;
          },
          mark);
      break;
    case 3:  // row of dots
      cv.tint(
          [&](double u, double v) {
            const double dv = v - (body_top + 0.5 * h);
            for (int i = -2; i <= 2; ++i) {
              const double du = u - (cx + 0.17 * w * i);
              if (du * du + dv * dv <= (0.045 * w) * (0.045 * w)) return true;
            }
            return false;
          },
          mark);
      break;
    case 4:  // two-tone lower half
      cv.tint([&](double u, double v) { return u >= left && u <= right && v >= body_top + 0.55 * h && v < body_bottom; },
              mark);
      break;
    case 5:  // diagonal sash, oriented by facing
      cv.tint(
          [&](double u, double v) {
            if (u < left || u > right || v < body_top || v >= body_bottom) return false;
            const double t = facing * (u - cx) / w + (v - body_top) / h * 0.5;
            return std::abs(t - 0.25) <= 0.07;
          },
          mark);
      break;
    default:
      break;
  }

  std::vector<double> wheels;
  if (identity.wheel_layout == 2) {
    wheels = {-0.36, -0.18, 0.33};
  } else {
    wheels = {-0.3, 0.3};
  }
  for (double off : wheels) {
    const double wx = cx + facing * off * w;
    cv.paint(
        [&](double u, double v) {
          const double du = u - wx, dv = v - base + wheel_r;
          return du * du + dv * dv <= wheel_r * wheel_r;
        },
        tyre, vehicle_depth);
    cv.tint(
        [&](double u, double v) {
          const double du = u - wx, dv = v - base + wheel_r;
          return du * du + dv * dv <= 0.16 * wheel_r * wheel_r;
        },
        hub);
  }
  return cv.finish();
}

void DataConfig::validate() const {
  if (image_size < 8) throw std::invalid_argument("image_size must be at least 8");
  if (syn_identities == 0 || syn_views == 0) throw std::invalid_argument("synthetic set must be non-empty");
  if (syn_eval_identities >= syn_identities && syn_eval_identities != 0) {
    throw std::invalid_argument("syn_eval_identities must leave training identities");
  }
  if (real_eval_identities > real_identities) throw std::invalid_argument("real_eval_identities exceeds real_identities");
  if ((syn_eval_identities > 0 || real_eval_identities > 0) && std::min(syn_views, real_views) < 2) {
    throw std::invalid_argument("eval identities need at least 2 views");
  }
  if (real_id_offset && *real_id_offset < syn_identities && real_identities > 0) {
    throw std::invalid_argument("identity ranges overlap: real ids start at " + std::to_string(*real_id_offset) +
                                " but synthetic ids run to " + std::to_string(syn_identities - 1));
  }
  for (const HazeDistribution* d : {&syn_haze, &real_haze}) {
    if (!(d->beta_lo > 0.0 && d->beta_lo <= d->beta_hi)) throw std::invalid_argument("invalid beta range");
    if (!(d->airlight_lo >= 0.0 && d->airlight_lo <= d->airlight_hi && d->airlight_hi <= 1.0)) {
      throw std::invalid_argument("invalid airlight range");
    }
  }
}

std::vector<std::size_t> Dataset::select(Domain domain, Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].domain == domain && samples[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::select(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

std::string sample_path(Domain domain, std::uint32_t id, std::uint32_t view) {
  return std::string(to_string(domain)) + "/" + std::to_string(id) + "/" + std::to_string(view) + ".png";
}

Dataset generate_dataset(const DataConfig& config, std::uint64_t seed) {
  config.validate();
  const auto real_first = config.real_id_offset.value_or(static_cast<std::uint32_t>(config.syn_identities));

  Rng id_rng = Rng::derive(seed, {kIdentityStream});
  std::vector<std::tuple<int, int, int, int, int, int>> taken;
  const std::vector<Identity> syn_ids = generate_identities(config.syn_identities, 0, id_rng, taken);
  const std::vector<Identity> real_ids = generate_identities(config.real_identities, real_first, id_rng, taken);

  const RenderConfig rc{config.image_size, 1.0};
  const std::size_t syn_train = config.syn_identities - config.syn_eval_identities;
  const std::size_t real_train = config.real_identities - config.real_eval_identities;

  // One slot per identity; each identity renders independently.
  std::vector<std::vector<Sample>> per_identity(syn_ids.size() + real_ids.size());
  parallel_for(per_identity.size(), [&](std::size_t slot) {
    std::vector<Sample>& out = per_identity[slot];
    if (slot < syn_ids.size()) {
      const Identity& ident = syn_ids[slot];
      for (std::uint32_t v = 0; v < config.syn_views; ++v) {
        Rng view_rng = Rng::derive(seed, {kViewStream, ident.id, v, 0});
        Rendered r = render_instance(ident, view_rng, rc);
        Rng haze_rng = Rng::derive(seed, {kHazeStream, ident.id, v});
        const HazeDraw draw = draw_haze(haze_rng, config.syn_haze);
        const Tensor clear = io::quantize8(r.image);
        // Hazy images are rendered from the stored (quantized) clear image so
        // that the stored pair reproduces them exactly up to quantization.
        Tensor hazy = io::quantize8(render_haze(clear, r.depth, draw));

        Sample c;
        c.image = clear;
        c.identity = ident.id;
        c.view = v;
        c.domain = Domain::syn_clear;
        c.path = sample_path(c.domain, ident.id, v);
        Sample h;
        h.image = std::move(hazy);
        h.identity = ident.id;
        h.view = v;
        h.domain = Domain::syn_hazy;
        h.pair = clear;
        h.haze = draw.params;
        h.depth = std::move(r.depth);
        h.path = sample_path(h.domain, ident.id, v);
        out.push_back(std::move(c));
        out.push_back(std::move(h));
      }
    } else {
      const std::size_t ri = slot - syn_ids.size();
      const Identity& ident = real_ids[ri];
      const bool eval = ri >= real_train;
      for (std::uint32_t v = 0; v < config.real_views; ++v) {
        if (!eval) {
          Rng view_rng = Rng::derive(seed, {kViewStream, ident.id, v, 0});
          Rendered r = render_instance(ident, view_rng, rc);
          Rng sensor = Rng::derive(seed, {kSensorStream, ident.id, v, 0});
          apply_sensor(r.image, sensor, config.real_haze);
          Sample c;
          c.image = io::quantize8(r.image);
          c.identity = ident.id;
          c.view = v;
          c.domain = Domain::real_clear;
          c.path = sample_path(c.domain, ident.id, v);
          out.push_back(std::move(c));
        }
        // Hazy views come from an independent pose draw: unpaired with the
        // clear views.
        Rng view_rng = Rng::derive(seed, {kViewStream, ident.id, v, 1});
        Rendered r = render_instance(ident, view_rng, rc);
        Rng haze_rng = Rng::derive(seed, {kHazeStream, ident.id, v});
        const HazeDraw draw = draw_haze(haze_rng, config.real_haze);
        Tensor hazy = render_haze(r.image, r.depth, draw);
        Rng sensor = Rng::derive(seed, {kSensorStream, ident.id, v, 1});
        apply_sensor(hazy, sensor, config.real_haze);
        Sample h;
        h.image = io::quantize8(hazy);
        h.identity = ident.id;
        h.view = v;
        h.domain = Domain::real_hazy;
        h.haze = draw.params;
        h.depth = std::move(r.depth);
        h.path = sample_path(h.domain, ident.id, v);
        out.push_back(std::move(h));
      }
    }
  });

  Dataset ds;
  ds.manifest.seed = seed;
  ds.manifest.generator_version = std::string(kGeneratorVersion);
  for (auto& group : per_identity) {
    for (Sample& s : group) {
      ManifestRecord rec;
      rec.id = s.identity;
      rec.path = s.path;
      rec.domain = s.domain;
      rec.split = Split::train;
      if (s.haze) {
        rec.beta = s.haze->beta;
        rec.airlight = s.haze->airlight;
      }
      ds.manifest.records.push_back(rec);
      ds.samples.push_back(std::move(s));
    }
  }

  std::vector<std::uint32_t> eval_ids;
  for (std::size_t i = syn_train; i < syn_ids.size(); ++i) eval_ids.push_back(syn_ids[i].id);
  for (std::size_t i = real_train; i < real_ids.size(); ++i) eval_ids.push_back(real_ids[i].id);
  if (!eval_ids.empty()) {
    Rng split_rng = Rng::derive(seed, {kSplitStream});
    ds.manifest = split_probe_gallery(std::move(ds.manifest), eval_ids, split_rng);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) ds.samples[i].split = ds.manifest.records[i].split;
  }
  check_disjoint_domains(ds.manifest);
  return ds;
}

DatasetManifest split_probe_gallery(DatasetManifest manifest, const std::vector<std::uint32_t>& eval_identities,
                                    Rng& rng) {
  std::map<std::uint32_t, std::vector<std::size_t>> hazy;
  std::set<std::uint32_t> eval(eval_identities.begin(), eval_identities.end());
  for (std::uint32_t id : eval) hazy[id];
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const ManifestRecord& r = manifest.records[i];
    if (eval.contains(r.id) && is_hazy(r.domain)) hazy[r.id].push_back(i);
  }
  std::string short_ids;
  for (const auto& [id, idx] : hazy) {
    if (idx.size() < 2) short_ids += (short_ids.empty() ? "" : ",") + std::to_string(id);
  }
  if (!short_ids.empty()) {
    throw ProtocolError("identities with fewer than 2 hazy images: " + short_ids);
  }
  for (ManifestRecord& r : manifest.records) {
    if (eval.contains(r.id)) r.split = Split::gallery;
  }
  for (const auto& [id, idx] : hazy) {
    manifest.records[idx[rng.below(idx.size())]].split = Split::probe;
  }
  return manifest;
}

void check_disjoint_domains(const DatasetManifest& manifest) {
  std::set<std::uint32_t> syn, real;
  for (const ManifestRecord& r : manifest.records) (is_synthetic(r.domain) ? syn : real).insert(r.id);
  std::vector<std::uint32_t> both;
  std::set_intersection(syn.begin(), syn.end(), real.begin(), real.end(), std::back_inserter(both));
  if (!both.empty()) {
    throw std::invalid_argument("identity " + std::to_string(both.front()) +
                                " appears in both synthetic and real domains");
  }
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const ManifestRecord& r : manifest.records) {
    json j;
    j["id"] = r.id;
    j["path"] = r.path;
    j["domain"] = std::string(to_string(r.domain));
    j["split"] = std::string(to_string(r.split));
    j["beta"] = r.beta ? json(*r.beta) : json(nullptr);
    j["airlight"] = r.airlight ? json(std::vector<double>(r.airlight->begin(), r.airlight->end())) : json(nullptr);
    out << j.dump() << '\n';
  }
  // Provenance sits beside the records so the JSONL stays one-record-per-line.
  std::ofstream meta(path.string() + ".meta.json", std::ios::binary);
  meta << json{{"seed", manifest.seed}, {"generator_version", manifest.generator_version}}.dump() << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read manifest " + path.string());
  DatasetManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ManifestRecord r;
      r.id = j.at("id").get<std::uint32_t>();
      r.path = j.at("path").get<std::string>();
      r.domain = parse_domain(j.at("domain").get<std::string>());
      r.split = parse_split(j.at("split").get<std::string>());
      r.beta = opt_double(j.at("beta"));
      if (!j.at("airlight").is_null()) {
        const auto a = j.at("airlight").get<std::vector<double>>();
        if (a.size() != 3) throw FormatError("airlight must have 3 entries");
        r.airlight = haze::Rgb{a[0], a[1], a[2]};
      }
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  std::ifstream meta(path.string() + ".meta.json", std::ios::binary);
  if (meta) {
    const json j = json::parse(meta, nullptr, false);
    if (!j.is_discarded()) {
      m.seed = j.value("seed", std::uint64_t{0});
      m.generator_version = j.value("generator_version", std::string{});
    }
  }
  return m;
}

namespace {
std::filesystem::path depth_path(const std::filesystem::path& root, const std::string& rel) {
  std::filesystem::path p = root / rel;
  p.replace_extension(".depth.png");
  return p;
}
}  // namespace

void write_dataset(const std::filesystem::path& root, const Dataset& dataset) {
  std::filesystem::create_directories(root);
  parallel_for(dataset.samples.size(), [&](std::size_t i) {
    const Sample& s = dataset.samples[i];
    io::write_png_rgb(root / s.path, s.image);
    if (!s.depth.empty()) io::write_png_gray16(depth_path(root, s.path), s.depth);
  });
  write_manifest(root / "manifest.jsonl", dataset.manifest);
}

Dataset load_dataset(const std::filesystem::path& root) {
  Dataset ds;
  ds.manifest = read_manifest(root / "manifest.jsonl");
  ds.samples.resize(ds.manifest.records.size());
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> syn_clear_index;
  parallel_for(ds.samples.size(), [&](std::size_t i) {
    const ManifestRecord& r = ds.manifest.records[i];
    Sample& s = ds.samples[i];
    if (!std::filesystem::exists(root / r.path)) throw FormatError("missing image " + (root / r.path).string());
    s.image = io::read_png_rgb(root / r.path);
    s.identity = r.id;
    s.domain = r.domain;
    s.split = r.split;
    s.path = r.path;
    const std::filesystem::path stem = std::filesystem::path(r.path).stem();
    s.view = static_cast<std::uint32_t>(std::stoul(stem.string()));
    if (r.beta && r.airlight) s.haze = haze::HazeParams{*r.beta, *r.airlight};
    const auto dp = depth_path(root, r.path);
    if (is_hazy(r.domain) && std::filesystem::exists(dp)) s.depth = io::read_png_gray16(dp);
  });
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (ds.samples[i].domain == Domain::syn_clear) {
      syn_clear_index[{ds.samples[i].identity, ds.samples[i].view}] = i;
    }
  }
  for (Sample& s : ds.samples) {
    if (s.domain != Domain::syn_hazy) continue;
    auto it = syn_clear_index.find({s.identity, s.view});
    if (it != syn_clear_index.end()) {
      s.pair = ds.samples[it->second].image;
    } else {
      const std::filesystem::path p = root / sample_path(Domain::syn_clear, s.identity, s.view);
      if (!std::filesystem::exists(p)) throw FormatError("syn_hazy sample without clear pair: " + s.path);
      s.pair = io::read_png_rgb(p);
    }
  }
  return ds;
}

std::vector<Tensor> augment(const std::vector<const Tensor*>& images, Rng& rng, const AugmentConfig& cfg) {
  std::vector<Tensor> out;
  out.reserve(images.size());
  if (!cfg.enabled) {
    for (const Tensor* t : images) out.push_back(*t);
    return out;
  }
  const std::size_t pad = cfg.crop_pad;
  const std::size_t dy = pad > 0 ? static_cast<std::size_t>(rng.below(2 * pad + 1)) : 0;
  const std::size_t dx = pad > 0 ? static_cast<std::size_t>(rng.below(2 * pad + 1)) : 0;
  const bool flip = rng.bernoulli(cfg.flip_prob);
  for (const Tensor* src : images) {
    const std::size_t C = src->dim(0), H = src->dim(1), W = src->dim(2);
    Tensor t({C, H, W}, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t y = 0; y < H; ++y) {
        // Output pixel (y, x) samples padded-source pixel (y + dy, x + dx).
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad);
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t x = 0; x < W; ++x) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - static_cast<std::ptrdiff_t>(pad);
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(W)) continue;
          const std::size_t ox = flip ? W - 1 - x : x;
          t[(c * H + y) * W + ox] = (*src)[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)];
        }
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

PkSampler::PkSampler(const Dataset& dataset, std::vector<std::size_t> pool, std::size_t p, std::size_t k, Rng rng)
    : p_(p), k_(k), rng_(rng) {
  if (p < 2 || k < 2) throw std::invalid_argument("PK sampler needs P >= 2 and K >= 2");
  std::map<std::uint32_t, std::vector<std::size_t>> groups;
  for (std::size_t i : pool) groups[dataset.samples.at(i).identity].push_back(i);
  for (auto& [id, idx] : groups) {
    ids_.push_back(id);
    by_id_.push_back(std::move(idx));
  }
  if (ids_.size() < p) {
    throw std::invalid_argument("PK sampler needs at least P=" + std::to_string(p) + " identities, got " +
                                std::to_string(ids_.size()));
  }
}

std::size_t PkSampler::batches_per_epoch() const { return ids_.size() / p_; }

std::vector<std::vector<std::size_t>> PkSampler::epoch() {
  std::vector<std::size_t> order(ids_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_.below(i)]);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b + p_ <= order.size(); b += p_) {
    std::vector<std::size_t> batch;
    for (std::size_t j = 0; j < p_; ++j) {
      std::vector<std::size_t> idx = by_id_[order[b + j]];
      if (idx.size() >= k_) {
        for (std::size_t i = 0; i < k_; ++i) std::swap(idx[i], idx[i + rng_.below(idx.size() - i)]);
        batch.insert(batch.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k_));
      } else {
        for (std::size_t i = 0; i < k_; ++i) batch.push_back(idx[rng_.below(idx.size())]);
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

RandomSampler::RandomSampler(std::vector<std::size_t> pool, std::size_t m, Rng rng)
    : pool_(std::move(pool)), m_(m), cursor_(0), rng_(rng) {
  if (pool_.empty()) throw std::invalid_argument("random sampler over an empty pool");
  if (m_ == 0) throw std::invalid_argument("batch size must be positive");
  cursor_ = pool_.size();
}

std::vector<std::size_t> RandomSampler::next() {
  std::vector<std::size_t> batch;
  batch.reserve(m_);
  while (batch.size() < m_) {
    if (cursor_ >= pool_.size()) {
      for (std::size_t i = pool_.size(); i > 1; --i) std::swap(pool_[i - 1], pool_[rng_.below(i)]);
      cursor_ = 0;
    }
    batch.push_back(pool_[cursor_++]);
  }
  return batch;
}

}  // namespace rvsl::data
