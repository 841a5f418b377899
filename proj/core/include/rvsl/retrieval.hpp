#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rvsl/net.hpp"
#include "rvsl/toyvehicle.hpp"

namespace rvsl::eval {

enum class Role : std::uint8_t { probe, gallery };

struct EmbeddingSet {
  Tensor embeddings;  ///< N x D
  std::vector<std::uint32_t> ids;
  std::vector<Role> roles;

  void validate() const;
};

/// Embeds the given samples (eval-mode batch norm, hazy samples through E_H
/// and clear ones through E_C). Roles follow the sample split; training
/// samples are rejected.
EmbeddingSet extract_embeddings(net::ModuleSet& models, const data::Dataset& dataset,
                                const std::vector<std::size_t>& indices);

/// P x G Euclidean distances, probes and gallery in set order.
Tensor distance_matrix(const EmbeddingSet& set);

/// Non-interpolated AP of a ranked relevance list; throws when no item is
/// relevant.
double average_precision(const std::vector<bool>& ranked_relevance);

struct EvalReport {
  double mAP = 0.0;
  std::vector<double> cmc;              ///< cmc[r-1] = CMC@r for r = 1..R
  std::vector<std::size_t> ranks;       ///< ranks reported in JSON
  std::size_t excluded_probes = 0;
  std::vector<std::uint32_t> probe_ids;
  std::vector<std::vector<std::size_t>> ranking;  ///< per probe, gallery positions by distance

  double cmc_at(std::size_t r) const { return cmc.at(r - 1); }
};

/// CMC and mAP under the one-probe-per-identity protocol; a second probe of
/// any identity is a ProtocolError. Distance ties go to the lower gallery
/// position.
EvalReport evaluate(const EmbeddingSet& set, std::vector<std::size_t> ranks = {1, 5, 10});

/// {"mAP", "cmc": {"1": ..}, "excluded_probes", "ranking"?}
std::string to_json(const EvalReport& report, bool include_ranking = false);

/// Checks that each identity with probe/gallery records has exactly one
/// probe and that the probe is a hazy image.
void check_protocol(const data::DatasetManifest& manifest);

/// Retrieval over every probe/gallery sample of one side of the corpus.
EvalReport evaluate_domain(net::ModuleSet& models, const data::Dataset& dataset, bool real_domain,
                           std::vector<std::size_t> ranks = {1, 5, 10});

}  // namespace rvsl::eval
