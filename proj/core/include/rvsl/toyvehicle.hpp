#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "rvsl/haze.hpp"
#include "rvsl/rng.hpp"
#include "rvsl/tensor.hpp"

namespace rvsl::data {

enum class Domain : std::uint8_t { syn_clear, syn_hazy, real_clear, real_hazy };
enum class Split : std::uint8_t { train, probe, gallery };

std::string_view to_string(Domain d) noexcept;
std::string_view to_string(Split s) noexcept;
Domain parse_domain(std::string_view s);
Split parse_split(std::string_view s);
constexpr bool is_hazy(Domain d) noexcept { return d == Domain::syn_hazy || d == Domain::real_hazy; }
constexpr bool is_synthetic(Domain d) noexcept { return d == Domain::syn_clear || d == Domain::syn_hazy; }

/// Appearance attributes that make a toy vehicle identifiable.
struct Identity {
  std::uint32_t id = 0;
  double body_hue = 0.0;         ///< [0, 1)
  double body_saturation = 0.0;  ///< [0.35, 0.95]
  double body_value = 0.0;       ///< [0.55, 0.8]
  double aspect = 0.0;           ///< body width / height, [2.0, 3.2]
  int wheel_layout = 0;          ///< 0..2
  int marking_pattern = 0;       ///< 0..5

  /// Coarse attribute tuple; two identities with equal keys count as a
  /// collision and the later one is resampled.
  std::tuple<int, int, int, int, int, int> key() const;
};

/// Draws attributes from their documented ranges; deterministic per stream.
Identity generate_identity(Rng& rng, std::uint32_t id);

/// `count` identities with sequential ids starting at `first_id`, resampling
/// on key collision against `taken` (which is extended).
std::vector<Identity> generate_identities(std::size_t count, std::uint32_t first_id, Rng& rng,
                                          std::vector<std::tuple<int, int, int, int, int, int>>& taken);

struct RenderConfig {
  std::size_t image_size = 64;
  /// Scales per-view pose/illumination jitter; 0 renders the canonical view.
  double jitter = 1.0;
};

struct Rendered {
  Tensor image;  ///< 3 x S x S in [0,1]
  Tensor depth;  ///< S x S in [0,1]; vehicle strictly nearer than background
};

Rendered render_instance(const Identity& identity, Rng& view_rng, const RenderConfig& cfg = {});

/// Haze sampling ranges for one domain.
struct HazeDistribution {
  double beta_lo = 0.4, beta_hi = 1.6;
  double airlight_lo = 0.5, airlight_hi = 1.0;
  double chroma_jitter = 0.0;     ///< per-channel airlight offset bound
  double airlight_gradient = 0.0; ///< max relative vertical airlight ramp
  double noise_sigma = 0.0;       ///< additive Gaussian sensor noise
  double gamma_jitter = 0.0;      ///< gamma drawn from [1 - g, 1 + g]

  static HazeDistribution synthetic() { return {}; }
  static HazeDistribution real_shifted() { return {0.8, 2.2, 0.5, 1.0, 0.08, 0.1, 0.01, 0.1}; }
};

struct DataConfig {
  std::size_t image_size = 64;
  std::size_t syn_identities = 120;
  std::size_t syn_views = 8;
  std::size_t syn_eval_identities = 0;  ///< held out of syn identities for syn-domain retrieval
  std::size_t real_identities = 60;
  std::size_t real_views = 8;
  std::size_t real_eval_identities = 30;  ///< held out of real identities; hazy views only
  /// First real identity id; must not overlap the synthetic id range.
  std::optional<std::uint32_t> real_id_offset;
  HazeDistribution syn_haze = HazeDistribution::synthetic();
  HazeDistribution real_haze = HazeDistribution::real_shifted();

  void validate() const;
};

struct Sample {
  Tensor image;  ///< 3 x S x S, 8-bit quantized values in [0,1]
  std::uint32_t identity = 0;
  std::uint32_t view = 0;
  Domain domain = Domain::syn_clear;
  Split split = Split::train;
  std::optional<Tensor> pair;  ///< clear ground truth; present iff syn_hazy
  std::optional<haze::HazeParams> haze;
  Tensor depth;                ///< present for hazy samples
  std::string path;            ///< relative to the dataset root
};

struct ManifestRecord {
  std::uint32_t id = 0;
  std::string path;
  Domain domain = Domain::syn_clear;
  Split split = Split::train;
  std::optional<double> beta;
  std::optional<haze::Rgb> airlight;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::uint64_t seed = 0;
  std::string generator_version;
};

inline constexpr std::string_view kGeneratorVersion = "toyvehicle-1";

/// In-memory corpus; samples[i] corresponds to manifest.records[i].
struct Dataset {
  DatasetManifest manifest;
  std::vector<Sample> samples;

  /// Indices of samples matching `domain` and `split`.
  std::vector<std::size_t> select(Domain domain, Split split) const;
  std::vector<std::size_t> select(Split split) const;
};

std::string sample_path(Domain domain, std::uint32_t id, std::uint32_t view);

/// Generates identities, renders views and applies domain-specific haze;
/// real-domain eval identities are split into probe/gallery. Deterministic
/// in (config, seed) for any worker count.
Dataset generate_dataset(const DataConfig& config, std::uint64_t seed);

/// One hazy record per eval identity becomes the probe; every other record
/// of those identities becomes gallery. Other records are untouched.
DatasetManifest split_probe_gallery(DatasetManifest manifest, const std::vector<std::uint32_t>& eval_identities,
                                    Rng& rng);

/// Throws std::invalid_argument when any identity appears in both the
/// synthetic and the real domain.
void check_disjoint_domains(const DatasetManifest& manifest);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Writes images (PNG), hazy depth maps (16-bit PNG next to the image) and
/// manifest.jsonl under `root`.
void write_dataset(const std::filesystem::path& root, const Dataset& dataset);
/// Loads a dataset written by write_dataset.
Dataset load_dataset(const std::filesystem::path& root);

struct AugmentConfig {
  bool enabled = true;
  std::size_t crop_pad = 4;
  double flip_prob = 0.5;
};

/// Random crop after zero padding, then horizontal flip. Images passed
/// together receive the same crop and flip.
std::vector<Tensor> augment(const std::vector<const Tensor*>& images, Rng& rng, const AugmentConfig& cfg);

/// Identity-balanced batches: P identities x K samples per batch. Each epoch
/// visits every identity once (the tail that does not fill P is dropped);
/// identities with fewer than K samples are drawn with replacement.
class PkSampler {
 public:
  PkSampler(const Dataset& dataset, std::vector<std::size_t> pool, std::size_t p, std::size_t k, Rng rng);
  std::vector<std::vector<std::size_t>> epoch();
  std::size_t batches_per_epoch() const;

 private:
  std::vector<std::uint32_t> ids_;
  std::vector<std::vector<std::size_t>> by_id_;
  std::size_t p_, k_;
  Rng rng_;
};

/// Uniform batches of M samples, reshuffling the pool whenever exhausted.
class RandomSampler {
 public:
  RandomSampler(std::vector<std::size_t> pool, std::size_t m, Rng rng);
  std::vector<std::size_t> next();

 private:
  std::vector<std::size_t> pool_;
  std::size_t m_;
  std::size_t cursor_;
  Rng rng_;
};

}  // namespace rvsl::data
