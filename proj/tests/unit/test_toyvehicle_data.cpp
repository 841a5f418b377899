#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "fixtures.hpp"
#include "rvsl/errors.hpp"
#include "rvsl/haze.hpp"
#include "rvsl/image_io.hpp"
#include "rvsl/parallel.hpp"
#include "rvsl/toyvehicle.hpp"

using namespace rvsl;
using data::Domain;
using data::Split;

namespace {

const data::Dataset& default_corpus() {
  static const data::Dataset ds = data::generate_dataset(data::DataConfig{}, 0);
  return ds;
}

double hue_of(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  if (d <= 0.0) return 0.0;
  double h;
  if (mx == r) h = std::fmod((g - b) / d, 6.0);
  else if (mx == g) h = (b - r) / d + 2.0;
  else h = (r - g) / d + 4.0;
  h /= 6.0;
  return h < 0.0 ? h + 1.0 : h;
}

// Median hue of saturated pixels nearer than the background.
double body_hue(const data::Rendered& r) {
  const std::size_t hw = r.depth.size();
  std::vector<double> hues;
  for (std::size_t p = 0; p < hw; ++p) {
    if (r.depth[p] >= 0.6) continue;
    const double R = r.image[p], G = r.image[hw + p], B = r.image[2 * hw + p];
    const double mx = std::max({R, G, B}), mn = std::min({R, G, B});
    if (mx <= 0.0 || (mx - mn) / mx < 0.3) continue;
    hues.push_back(hue_of(R, G, B));
  }
  REQUIRE(!hues.empty());
  std::nth_element(hues.begin(), hues.begin() + hues.size() / 2, hues.end());
  return hues[hues.size() / 2];
}

double circular(double a, double b) {
  const double d = std::abs(a - b);
  return std::min(d, 1.0 - d);
}

double mean_dark_channel(const data::Dataset& ds, Domain d) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i : ds.select(d, Split::train)) {
    total += haze::dark_channel(ds.samples[i].image).sum();
    n += ds.samples[i].image.dim(1) * ds.samples[i].image.dim(2);
  }
  return total / static_cast<double>(n);
}

data::DatasetManifest toy_manifest(std::size_t ids, std::size_t hazy_views) {
  data::DatasetManifest m;
  for (std::uint32_t id = 0; id < ids; ++id) {
    for (std::uint32_t v = 0; v < hazy_views; ++v) {
      m.records.push_back({id, data::sample_path(Domain::real_hazy, id, v), Domain::real_hazy, Split::train, 1.0,
                           haze::Rgb{1, 1, 1}});
    }
  }
  return m;
}

}  // namespace

TEST_CASE("identities are deterministic, sequential and unique") {
  Rng a(5), b(5);
  const auto x = data::generate_identity(a, 3), y = data::generate_identity(b, 3);
  CHECK(x.key() == y.key());
  CHECK(x.body_hue == y.body_hue);
  CHECK(x.aspect == y.aspect);

  Rng rng(17);
  std::vector<std::tuple<int, int, int, int, int, int>> taken;
  const auto ids = data::generate_identities(1000, 0, rng, taken);
  REQUIRE(ids.size() == 1000);
  std::set<std::tuple<int, int, int, int, int, int>> keys;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CHECK(ids[i].id == i);
    keys.insert(ids[i].key());
    CHECK((ids[i].body_hue >= 0.0 && ids[i].body_hue < 1.0));
    CHECK((ids[i].body_saturation >= 0.35 && ids[i].body_saturation <= 0.95));
    CHECK((ids[i].aspect >= 2.0 && ids[i].aspect <= 3.2));
    CHECK((ids[i].wheel_layout >= 0 && ids[i].wheel_layout <= 2));
    CHECK((ids[i].marking_pattern >= 0 && ids[i].marking_pattern <= 5));
  }
  CHECK(keys.size() >= 995);
}

TEST_CASE("rendering") {
  Rng idr(1);
  const auto id = data::generate_identity(idr, 0);

  SUBCASE("zero jitter is bit-identical whatever the view stream") {
    Rng v1(10), v2(20);
    const auto r1 = data::render_instance(id, v1, {64, 0.0});
    const auto r2 = data::render_instance(id, v2, {64, 0.0});
    CHECK(r1.image == r2.image);
    CHECK(r1.depth == r2.depth);
  }

  SUBCASE("vehicle is strictly nearer than the background") {
    Rng v(3);
    const auto r = data::render_instance(id, v);
    std::set<double> near;
    double far_min = 2.0;
    for (double d : r.depth.data()) {
      if (d < 0.6) near.insert(d);
      else far_min = std::min(far_min, d);
    }
    REQUIRE(near.size() == 1);
    CHECK(*near.begin() < far_min);
    CHECK(r.image.min() >= 0.0);
    CHECK(r.image.max() <= 1.0);
    CHECK(r.depth.max() <= 1.0);
  }

  SUBCASE("views differ in pose but keep the body hue") {
    Rng ir(8);
    for (std::uint32_t k = 0; k < 20; ++k) {
      const auto ident = data::generate_identity(ir, k);
      Rng va(100 + k), vb(200 + k);
      const auto a = data::render_instance(ident, va), b = data::render_instance(ident, vb);
      CHECK(!(a.image == b.image));
      CHECK(circular(body_hue(a), body_hue(b)) <= 0.02);
    }
  }
}

TEST_CASE("default corpus counts and haze ranges") {
  const auto& ds = default_corpus();
  std::map<Domain, std::set<std::uint32_t>> ids;
  std::map<Domain, std::size_t> counts;
  for (const auto& s : ds.samples) {
    ids[s.domain].insert(s.identity);
    ++counts[s.domain];
  }
  CHECK(ids[Domain::syn_clear].size() == 120);
  CHECK(counts[Domain::syn_clear] == 120 * 8);
  CHECK(counts[Domain::syn_hazy] == 120 * 8);
  std::set<std::uint32_t> real = ids[Domain::real_hazy];
  real.insert(ids[Domain::real_clear].begin(), ids[Domain::real_clear].end());
  CHECK(real.size() == 60);
  // Every real identity has 8 hazy views; only training identities also
  // have (unpaired) clear ones.
  CHECK(counts[Domain::real_hazy] == 60 * 8);
  CHECK(counts[Domain::real_clear] == 30 * 8);
  CHECK(ids[Domain::real_clear].size() == 30);
  CHECK(ds.manifest.records.size() == ds.samples.size());

  for (const auto& s : ds.samples) {
    if (s.domain == Domain::syn_hazy) {
      REQUIRE(s.pair.has_value());
      REQUIRE(s.haze.has_value());
      CHECK((s.haze->beta >= 0.4 && s.haze->beta <= 1.6));
      const auto& a = s.haze->airlight;
      CHECK((a[0] >= 0.5 && a[0] <= 1.0));
      CHECK((a[0] == a[1] && a[1] == a[2]));
    } else {
      CHECK(!s.pair.has_value());
    }
    if (s.domain == Domain::real_hazy) {
      REQUIRE(s.haze.has_value());
      CHECK((s.haze->beta >= 0.8 && s.haze->beta <= 2.2));
    }
    CHECK(s.image.min() >= 0.0);
    CHECK(s.image.max() <= 1.0);
  }
  CHECK_NOTHROW(data::check_disjoint_domains(ds.manifest));
}

TEST_CASE("synthetic and real domains never share an identity") {
  data::DatasetManifest m;
  m.records.push_back({4, "a", Domain::syn_clear, Split::train, std::nullopt, std::nullopt});
  m.records.push_back({4, "b", Domain::real_hazy, Split::train, 1.0, haze::Rgb{1, 1, 1}});
  CHECK_THROWS_AS(data::check_disjoint_domains(m), std::invalid_argument);

  data::DataConfig cfg;
  cfg.real_id_offset = 100;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("real haze is denser than synthetic haze") {
  const auto& ds = default_corpus();
  CHECK(mean_dark_channel(ds, Domain::real_hazy) > mean_dark_channel(ds, Domain::syn_hazy));
}

TEST_CASE("stored hazy images are reproduced from their pair") {
  const auto& ds = default_corpus();
  for (std::size_t i : ds.select(Domain::syn_hazy, Split::train)) {
    const auto& s = ds.samples[i];
    const Tensor t = haze::transmission_from_depth(s.depth, s.haze->beta);
    const Tensor again = haze::synthesize_haze(*s.pair, t, *s.haze);
    REQUIRE(max_abs_diff(again, s.image) <= 1.0 / 255.0 + 1e-12);
  }
}

TEST_CASE("probe / gallery split") {
  std::vector<std::uint32_t> eval;
  for (std::uint32_t i = 0; i < 10; ++i) eval.push_back(i);
  Rng r1(4), r2(4);
  const auto a = data::split_probe_gallery(toy_manifest(12, 4), eval, r1);
  const auto b = data::split_probe_gallery(toy_manifest(12, 4), eval, r2);
  CHECK(a.records == b.records);
  std::size_t probes = 0, gallery = 0, train = 0;
  std::set<std::string> probe_paths, gallery_paths;
  for (const auto& r : a.records) {
    if (r.split == Split::probe) {
      ++probes;
      probe_paths.insert(r.path);
    } else if (r.split == Split::gallery) {
      ++gallery;
      gallery_paths.insert(r.path);
    } else {
      ++train;
      CHECK(r.id >= 10);
    }
  }
  CHECK(probes == 10);
  CHECK(gallery == 30);
  CHECK(train == 8);
  for (const auto& p : probe_paths) CHECK(!gallery_paths.contains(p));

  Rng r3(4);
  CHECK_THROWS_AS(data::split_probe_gallery(toy_manifest(3, 1), {0, 1}, r3), ProtocolError);
}

TEST_CASE("default corpus follows the probe protocol") {
  const auto& ds = default_corpus();
  std::map<std::uint32_t, int> probes;
  for (const auto& r : ds.manifest.records) {
    if (r.split == Split::probe) {
      ++probes[r.id];
      CHECK(data::is_hazy(r.domain));
    }
  }
  CHECK(probes.size() == 30);
  for (const auto& [id, n] : probes) CHECK(n == 1);
}

TEST_CASE("generation is deterministic for any worker count") {
  data::DataConfig cfg;
  cfg.image_size = 16;
  cfg.syn_identities = 6;
  cfg.syn_views = 3;
  cfg.real_identities = 4;
  cfg.real_views = 3;
  cfg.real_eval_identities = 2;
  set_worker_count(1);
  const auto a = data::generate_dataset(cfg, 9);
  set_worker_count(3);
  const auto b = data::generate_dataset(cfg, 9);
  set_worker_count(0);
  REQUIRE(a.samples.size() == b.samples.size());
  CHECK(a.manifest.records == b.manifest.records);
  for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i].image == b.samples[i].image);
  const auto c = data::generate_dataset(cfg, 10);
  CHECK(!(c.samples[0].image == a.samples[0].image));
}

TEST_CASE("dataset and manifest round trip through disk") {
  data::DataConfig cfg;
  cfg.image_size = 16;
  cfg.syn_identities = 4;
  cfg.syn_views = 2;
  cfg.real_identities = 4;
  cfg.real_views = 3;
  cfg.real_eval_identities = 2;
  const auto ds = data::generate_dataset(cfg, 3);
  fixture::TempDir dir("rvsl_data_rt");
  data::write_dataset(dir.path, ds);
  for (const auto& r : ds.manifest.records) CHECK(std::filesystem::exists(dir.path / r.path));
  const auto back = data::load_dataset(dir.path);
  CHECK(back.manifest.records == ds.manifest.records);
  CHECK(back.manifest.seed == ds.manifest.seed);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(max_abs_diff(back.samples[i].image, ds.samples[i].image) <= 1.0 / 255.0);
    CHECK(back.samples[i].pair.has_value() == ds.samples[i].pair.has_value());
  }

  const auto m = data::read_manifest(dir.path / "manifest.jsonl");
  CHECK(m.records == ds.manifest.records);
  std::filesystem::remove(dir.path / ds.manifest.records.front().path);
  CHECK_THROWS_AS(data::load_dataset(dir.path), FormatError);
}

TEST_CASE("8-bit codec round trip") {
  const Tensor img = io::quantize8(fixture::uniform({3, 5, 7}, 2));
  fixture::TempDir dir("rvsl_png");
  io::write_png_rgb(dir.path / "a.png", img);
  CHECK(max_abs_diff(io::read_png_rgb(dir.path / "a.png"), img) < 1e-12);
  const Tensor depth = fixture::uniform({5, 7}, 3);
  io::write_png_gray16(dir.path / "d.png", depth);
  CHECK(max_abs_diff(io::read_png_gray16(dir.path / "d.png"), depth) <= 0.5 / 65535.0 + 1e-12);
}

TEST_CASE("augmentation applies one crop and flip to paired images") {
  const Tensor a = fixture::uniform({3, 8, 8}, 1), b = fixture::uniform({3, 8, 8}, 2);
  Rng rng(0);
  data::AugmentConfig cfg;
  cfg.flip_prob = 1.0;
  cfg.crop_pad = 0;
  const auto out = data::augment({&a, &b}, rng, cfg);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        CHECK(out[0].at({c, y, x}) == a.at({c, y, 7 - x}));
        CHECK(out[1].at({c, y, x}) == b.at({c, y, 7 - x}));
      }

  cfg = {};
  cfg.enabled = false;
  const auto same = data::augment({&a}, rng, cfg);
  CHECK(same[0] == a);

  // With padding, the same shift lands on both images.
  cfg = {};
  cfg.flip_prob = 0.0;
  for (int i = 0; i < 10; ++i) {
    const auto o = data::augment({&a, &a}, rng, cfg);
    CHECK(o[0] == o[1]);
    CHECK(o[0].shape() == a.shape());
  }
}

TEST_CASE("PK sampler visits each identity once per epoch") {
  const auto& ds = default_corpus();
  const auto pool = ds.select(Domain::syn_clear, Split::train);
  data::PkSampler pk(ds, pool, 4, 4, Rng(1));
  CHECK(pk.batches_per_epoch() == 30);
  const auto epoch = pk.epoch();
  CHECK(epoch.size() == 30);
  std::set<std::uint32_t> seen;
  for (const auto& batch : epoch) {
    REQUIRE(batch.size() == 16);
    std::map<std::uint32_t, int> per_id;
    for (std::size_t i : batch) ++per_id[ds.samples[i].identity];
    CHECK(per_id.size() == 4);
    for (const auto& [id, n] : per_id) {
      CHECK(n == 4);
      CHECK(seen.insert(id).second);
    }
  }
  CHECK(seen.size() == 120);
  CHECK_THROWS(data::PkSampler(ds, pool, 1, 4, Rng(1)));
}

TEST_CASE("random sampler exhausts its pool before repeating") {
  std::vector<std::size_t> pool{3, 5, 7, 9, 11, 13};
  data::RandomSampler rs(pool, 3, Rng(2));
  std::multiset<std::size_t> first;
  for (int i = 0; i < 2; ++i)
    for (std::size_t v : rs.next()) first.insert(v);
  CHECK(first == std::multiset<std::size_t>(pool.begin(), pool.end()));
  CHECK_THROWS(data::RandomSampler({}, 2, Rng(0)));
}
