#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rvsl/autodiff.hpp"
#include "rvsl/haze.hpp"
#include "rvsl/net.hpp"

namespace rvsl::loss {

using ad::Var;

struct LossWeights {
  double dts = 1.0, rc = 1.0, midc = 1.0, cr = 1.0, dis = 1.0;
  double dc = 1.0, tv = 1.0, tri = 1.0, id = 1.0, ec = 1.0;

  void validate() const;
  /// Weight for a part key ("dts", "rc", ...).
  double of(std::string_view part) const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct TripletConfig {
  double margin = 0.3;
  void validate() const;
};

/// Mean absolute error over all elements of equally shaped image batches,
/// i.e. the batch mean of per-image mean L1.
Var l_domain_transform(Var pred, Var target);
Var l_render_consistency(Var input, Var cycled);

/// DM: 1 where the rendered hazy dark channel is below the clear one.
Tensor midc_mask(const Tensor& clear_dc, const Tensor& hazy_dc);

/// Monotonically increasing dark channel loss. `dm_fraction`, when given,
/// receives the fraction of pixels selected by DM.
Var l_midc(Var clear, Var rendered_hazy, const haze::DarkChannelConfig& cfg = {}, double* dm_fraction = nullptr);

/// Colinearity loss with the airlight of each rendered hazy image estimated
/// by the dark channel prior and held constant.
Var l_colinear(Var clear, Var rendered_hazy, const haze::DarkChannelConfig& cfg = {});
/// Same with explicit per-image airlights.
Var l_colinear(Var clear, Var rendered_hazy, const std::vector<haze::Rgb>& airlights);

inline constexpr double kProbClamp = 1e-7;

/// Discriminator objective from probabilities of real and (detached) fake
/// images: -mean log p_real - mean log(1 - p_fake).
Var discriminator_loss(Var p_real, Var p_fake);
/// Saturating generator objective mean log(1 - p_fake), minimized.
Var generator_loss(Var p_fake);

struct AdversarialLosses {
  Var d_loss;
  Var g_loss;
};

/// Both adversarial objectives in one graph. The fake batch enters d_loss
/// through a gradient stop, so d_loss never reaches the generator.
AdversarialLosses l_discriminative(ad::Graph& g, net::Block& disc, const net::NetConfig& cfg, Var real, Var fake);

Var l_dark_channel(Var rendered_clear, const haze::DarkChannelConfig& cfg = {});

/// Sum of absolute forward differences along x and y over every channel,
/// divided by H*W and averaged over the batch.
Var l_total_variation(Var rendered_clear);

/// Batch-hard triplet loss over embeddings N x D. Ties in mining go to the
/// lowest index.
Var l_triplet_batch_hard(Var embeddings, const std::vector<std::uint32_t>& labels, const TripletConfig& cfg = {});

/// Hardest positive / negative column per anchor, as used by the triplet loss.
struct Mining {
  std::vector<std::size_t> positive, negative;
};
Mining mine_batch_hard(const Tensor& distances, const std::vector<std::uint32_t>& labels);

Var l_id_cross_entropy(Var logits, const std::vector<std::uint32_t>& labels);

Var l_embedding_consistency(Var emb_a, Var emb_b);

enum class Stage : std::uint8_t { supervised, unsup_clear, unsup_hazy };
std::string_view to_string(Stage s) noexcept;

/// Part keys a stage must supply. `identity_supervision` adds tri and id to
/// the unsupervised stages (the fully supervised variant).
std::vector<std::string> required_parts(Stage stage, bool identity_supervision = false);

/// Weighted sum of exactly the stage's required parts; anything missing or
/// extra is rejected.
Var compose_stage_loss(Stage stage, const std::map<std::string, Var>& parts, const LossWeights& w,
                       bool identity_supervision = false);

}  // namespace rvsl::loss
