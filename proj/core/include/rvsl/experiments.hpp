#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rvsl/config.hpp"
#include "rvsl/gradcheck.hpp"
#include "rvsl/retrieval.hpp"

namespace rvsl::exp {

/// Builds fresh models sized for the dataset's training identities.
net::ModuleSet build_for(const RunConfig& cfg, const data::Dataset& dataset);

struct RunOutcome {
  eval::EvalReport real;
  std::optional<eval::EvalReport> syn;
  std::string checkpoint;  ///< serialized final models
  std::size_t steps = 0;
  double seconds = 0.0;
};

/// Train from scratch with cfg.train and evaluate real-domain retrieval (and
/// synthetic retrieval when the corpus holds synthetic eval identities).
RunOutcome train_and_evaluate(const RunConfig& cfg, const data::Dataset& dataset, std::ostream* log = nullptr);

struct Variant {
  std::string name;
  std::function<void(RunConfig&)> apply;
};

/// Syn / Syn+RC / Syn+RH / Full.
std::vector<Variant> stage_variants();
/// Full / w/o CR & MIDC / w/o DC & TV.
std::vector<Variant> loss_variants();
/// Encoder depth 1..4 with the total block count held fixed.
std::vector<Variant> depth_variants(const RunConfig& base);
/// Full / Full-F.
std::vector<Variant> f_variants();

struct AblationRow {
  std::string name;
  std::vector<double> maps;  ///< one per seed, real-domain mAP
  double median = 0.0;
};

double median(std::vector<double> v);

using Progress = std::function<void(const std::string& variant, std::uint64_t seed, const RunOutcome&)>;

/// Runs every variant for every seed; the corpus for a seed is generated
/// once from (base.data, seed) and shared by that seed's variants.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<Variant>& variants,
                                      const std::vector<std::uint64_t>& seeds, const Progress& progress = {});

/// Markdown table: variant, per-seed mAP, median (percent).
std::string format_table(const std::vector<AblationRow>& rows);

struct GradCase {
  std::string name;
  double tolerance = 0.0;
  ad::GradCheckReport report;
};

/// Finite-difference checks of every loss (8x8 images, tolerance 1e-4) and
/// every network path (8x8 / 16x16, tolerance 1e-3).
std::vector<GradCase> run_gradient_suite(std::uint64_t seed = 7);

}  // namespace rvsl::exp
