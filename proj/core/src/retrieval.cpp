#include "rvsl/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <json.hpp>

#include "rvsl/errors.hpp"
#include "rvsl/parallel.hpp"

namespace rvsl::eval {
namespace {

constexpr std::size_t kEmbedChunk = 32;

// Embeds images in fixed chunks; eval-mode batch norm makes each row depend
// on its own image only.
void embed_rows(net::ModuleSet& models, const data::Dataset& dataset, const std::vector<std::size_t>& indices,
                const std::vector<std::size_t>& rows, bool hazy, Tensor& out) {
  const std::size_t D = models.config.embedding_dim;
  for (std::size_t start = 0; start < rows.size(); start += kEmbedChunk) {
    const std::size_t end = std::min(rows.size(), start + kEmbedChunk);
    std::vector<Tensor> images;
    for (std::size_t r = start; r < end; ++r) images.push_back(dataset.samples.at(indices[rows[r]]).image);
    const Tensor e = net::embed(models, stack(images), hazy);
    for (std::size_t r = start; r < end; ++r) {
      std::copy_n(e.raw() + (r - start) * D, D, out.raw() + rows[r] * D);
    }
  }
}

}  // namespace

void EmbeddingSet::validate() const {
  if (embeddings.rank() != 2 || embeddings.dim(0) != ids.size() || ids.size() != roles.size()) {
    throw ShapeError("embedding set: " + shape_str(embeddings.shape()) + " rows vs " + std::to_string(ids.size()) +
                     " ids / " + std::to_string(roles.size()) + " roles");
  }
}

EmbeddingSet extract_embeddings(net::ModuleSet& models, const data::Dataset& dataset,
                                const std::vector<std::size_t>& indices) {
  const std::size_t S = models.config.image_size;
  EmbeddingSet set;
  std::vector<std::size_t> hazy_rows, clear_rows;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const data::Sample& s = dataset.samples.at(indices[r]);
    if (s.image.shape() != Shape{3, S, S}) {
      throw ShapeError("image " + s.path + " is " + shape_str(s.image.shape()) + " but the model expects 3x" +
                       std::to_string(S) + "x" + std::to_string(S));
    }
    if (s.split == data::Split::train) throw ProtocolError("training sample " + s.path + " in an evaluation set");
    set.ids.push_back(s.identity);
    set.roles.push_back(s.split == data::Split::probe ? Role::probe : Role::gallery);
    (data::is_hazy(s.domain) ? hazy_rows : clear_rows).push_back(r);
  }
  if (indices.empty()) throw std::invalid_argument("no samples to embed");
  set.embeddings = Tensor({indices.size(), models.config.embedding_dim});
  embed_rows(models, dataset, indices, hazy_rows, true, set.embeddings);
  embed_rows(models, dataset, indices, clear_rows, false, set.embeddings);
  return set;
}

Tensor distance_matrix(const EmbeddingSet& set) {
  set.validate();
  std::vector<std::size_t> probes, gallery;
  for (std::size_t i = 0; i < set.roles.size(); ++i) (set.roles[i] == Role::probe ? probes : gallery).push_back(i);
  if (probes.empty() || gallery.empty()) throw std::invalid_argument("distance matrix needs at least one probe and one gallery row");
  const std::size_t D = set.embeddings.dim(1);
  Tensor d({probes.size(), gallery.size()});
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const double* a = set.embeddings.raw() + probes[p] * D;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      const double* b = set.embeddings.raw() + gallery[g] * D;
      double sq = 0.0;
      for (std::size_t k = 0; k < D; ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
      d[p * gallery.size() + g] = std::sqrt(sq);
    }
  }
  return d;
}

double average_precision(const std::vector<bool>& rel) {
  double hits = 0.0, acc = 0.0;
  for (std::size_t k = 0; k < rel.size(); ++k) {
    if (!rel[k]) continue;
    hits += 1.0;
    acc += hits / static_cast<double>(k + 1);
  }
  if (hits == 0.0) throw std::invalid_argument("average precision undefined without relevant items");
  return acc / hits;
}

EvalReport evaluate(const EmbeddingSet& set, std::vector<std::size_t> ranks) {
  set.validate();
  if (ranks.empty()) ranks = {1, 5, 10};
  std::sort(ranks.begin(), ranks.end());
  ranks.erase(std::unique(ranks.begin(), ranks.end()), ranks.end());
  if (ranks.front() == 0) throw std::invalid_argument("CMC ranks start at 1");

  std::vector<std::size_t> probes, gallery;
  for (std::size_t i = 0; i < set.roles.size(); ++i) (set.roles[i] == Role::probe ? probes : gallery).push_back(i);
  std::map<std::uint32_t, std::size_t> per_id;
  for (std::size_t p : probes) {
    if (++per_id[set.ids[p]] > 1) {
      throw ProtocolError("identity " + std::to_string(set.ids[p]) + " has more than one probe");
    }
  }
  const Tensor d = distance_matrix(set);
  const std::size_t P = probes.size(), G = gallery.size();
  const std::size_t R = std::max<std::size_t>(10, ranks.back());

  EvalReport rep;
  rep.ranks = ranks;
  rep.ranking.resize(P);
  std::vector<double> ap(P, -1.0);
  std::vector<std::size_t> first_hit(P, G);
  parallel_for(P, [&](std::size_t p) {
    std::vector<std::size_t> order(G);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return d[p * G + a] < d[p * G + b]; });
    std::vector<bool> rel(G);
    for (std::size_t k = 0; k < G; ++k) rel[k] = set.ids[gallery[order[k]]] == set.ids[probes[p]];
    const auto hit = std::find(rel.begin(), rel.end(), true);
    if (hit != rel.end()) {
      first_hit[p] = static_cast<std::size_t>(hit - rel.begin());
      ap[p] = average_precision(rel);
    }
    rep.ranking[p] = std::move(order);
  });

  rep.cmc.assign(R, 0.0);
  std::size_t counted = 0;
  double ap_sum = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    rep.probe_ids.push_back(set.ids[probes[p]]);
    if (ap[p] < 0.0) {
      ++rep.excluded_probes;
      continue;
    }
    ++counted;
    ap_sum += ap[p];
    for (std::size_t r = first_hit[p]; r < R; ++r) rep.cmc[r] += 1.0;
  }
  if (counted > 0) {
    rep.mAP = ap_sum / static_cast<double>(counted);
    for (double& c : rep.cmc) c /= static_cast<double>(counted);
  }
  return rep;
}

std::string to_json(const EvalReport& report, bool include_ranking) {
  nlohmann::json j;
  j["mAP"] = report.mAP;
  nlohmann::json cmc = nlohmann::json::object();
  for (std::size_t r : report.ranks) cmc[std::to_string(r)] = report.cmc_at(r);
  j["cmc"] = cmc;
  j["excluded_probes"] = report.excluded_probes;
  if (include_ranking) {
    nlohmann::json ranking = nlohmann::json::array();
    for (std::size_t p = 0; p < report.ranking.size(); ++p) {
      ranking.push_back({{"probe_id", report.probe_ids[p]}, {"gallery", report.ranking[p]}});
    }
    j["ranking"] = ranking;
  }
  return j.dump(2);
}

void check_protocol(const data::DatasetManifest& manifest) {
  std::map<std::uint32_t, std::size_t> probes;
  std::map<std::uint32_t, bool> evaluated;
  for (const data::ManifestRecord& r : manifest.records) {
    if (r.split == data::Split::train) continue;
    evaluated[r.id] = true;
    if (r.split != data::Split::probe) continue;
    if (!data::is_hazy(r.domain)) throw ProtocolError("probe " + r.path + " is not a hazy image");
    ++probes[r.id];
  }
  for (const auto& [id, _] : evaluated) {
    const std::size_t n = probes.contains(id) ? probes[id] : 0;
    if (n != 1) {
      throw ProtocolError("identity " + std::to_string(id) + " has " + std::to_string(n) + " probes (expected 1)");
    }
  }
}

EvalReport evaluate_domain(net::ModuleSet& models, const data::Dataset& dataset, bool real_domain,
                           std::vector<std::size_t> ranks) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const data::Sample& s = dataset.samples[i];
    if (s.split != data::Split::train && data::is_synthetic(s.domain) != real_domain) idx.push_back(i);
  }
  if (idx.empty()) throw std::invalid_argument(std::string("no ") + (real_domain ? "real" : "synthetic") + " evaluation samples");
  return evaluate(extract_embeddings(models, dataset, idx), std::move(ranks));
}

}  // namespace rvsl::eval
