#include "rvsl/trainer.hpp"

#include <cmath>
#include <ostream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "rvsl/parallel.hpp"

namespace rvsl::train {
namespace {

using ad::Graph;
using ad::Var;
using data::Domain;
using data::Split;
using net::Mode;

// Rng stream tags; every (tag, iteration) pair is an independent stream so
// that toggling one stage never shifts the randomness of another.
enum Stream : std::uint64_t {
  kSupSampler = 20,
  kClearSampler = 21,
  kHazySampler = 22,
  kHazyPool = 23,
  kClearPool = 24,
  kSupAugment = 30,
  kClearAugment = 31,
  kHazyAugment = 32,
  kDiscH = 41,
  kDiscC = 42,
};

std::vector<std::size_t> concat(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Var average(Var a, Var b) { return ad::mul_scalar(ad::add(a, b), 0.5); }

// Batch-hard mining over both streams together: an anchor's hardest positive
// or negative may come from the other domain.
Var both_streams_triplet(Var a, Var b, const std::vector<std::uint32_t>& labels, const loss::TripletConfig& cfg) {
  std::vector<std::uint32_t> both = labels;
  both.insert(both.end(), labels.begin(), labels.end());
  return loss::l_triplet_batch_hard(ad::concat_batch(a, b), both, cfg);
}

// Cycles through PK epochs, refilling when a pass is exhausted.
class PkStream {
 public:
  PkStream(data::PkSampler sampler) : sampler_(std::move(sampler)) {}
  const std::vector<std::size_t>& next() {
    if (pos_ >= batches_.size()) {
      batches_ = sampler_.epoch();
      pos_ = 0;
    }
    return batches_[pos_++];
  }

 private:
  data::PkSampler sampler_;
  std::vector<std::vector<std::size_t>> batches_;
  std::size_t pos_ = 0;
};

}  // namespace

void TrainConfig::validate() const {
  if (p < 2 || k < 2) throw std::invalid_argument("batch needs P >= 2 and K >= 2 for triplet mining");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (!(lr_init > 0.0) || !(lr_peak > 0.0)) throw std::invalid_argument("learning rates must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("decay must lie in (0, 1]");
  if (decay_interval == 0) throw std::invalid_argument("decay_interval must be positive");
  if (!(disc_lr_scale >= 0.0)) throw std::invalid_argument("disc_lr_scale must be >= 0");
  if (f_variant && unsup_batch != 0 && unsup_batch != p * k) {
    throw std::invalid_argument("f_variant draws P x K real batches; unsup_batch must be 0 or P*K");
  }
  adam.validate();
  weights.validate();
  triplet.validate();
  dark_channel.validate();
}

double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch < cfg.warmup_epochs) {
    const double f = static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs);
    return cfg.lr_init + (cfg.lr_peak - cfg.lr_init) * f;
  }
  const std::size_t steps = (epoch - cfg.warmup_epochs) / cfg.decay_interval;
  return cfg.lr_peak * std::pow(cfg.decay, static_cast<double>(steps));
}

std::string to_json(const StepLog& log) {
  nlohmann::json j;
  j["iter"] = log.iter;
  j["stage"] = std::string(loss::to_string(log.stage));
  j["losses"] = log.losses;
  j["lr"] = log.lr;
  j["grad_norm"] = log.grad_norm;
  if (log.dm_fraction) j["dm_fraction"] = *log.dm_fraction;
  return j.dump();
}

std::map<std::uint32_t, std::uint32_t> class_map(const data::Dataset& dataset, bool include_real) {
  std::map<std::uint32_t, std::uint32_t> out;
  auto add = [&](Domain d) {
    std::set<std::uint32_t> ids;
    for (std::size_t i : dataset.select(d, Split::train)) ids.insert(dataset.samples[i].identity);
    for (std::uint32_t id : ids) out.emplace(id, static_cast<std::uint32_t>(out.size()));
  };
  add(Domain::syn_hazy);
  if (include_real) {
    add(Domain::real_clear);
    add(Domain::real_hazy);
  }
  return out;
}

Trainer::Trainer(net::ModuleSet& models, const data::Dataset& dataset, TrainConfig cfg)
    : models_(models),
      data_(dataset),
      cfg_(std::move(cfg)),
      classes_(class_map(dataset, cfg_.f_variant)),
      gen_opt_(models.generator_parameters(), cfg_.adam),
      disc_h_opt_({}, cfg_.adam),
      disc_c_opt_({}, cfg_.adam) {
  cfg_.validate();
  retain_freed_memory();
  if (models_.config.num_classes < classes_.size()) {
    throw std::invalid_argument("classifier has " + std::to_string(models_.config.num_classes) + " rows but " +
                                std::to_string(classes_.size()) + " training identities");
  }
  auto trainable = [](net::Block& b) {
    std::vector<ad::Parameter*> out;
    for (ad::Parameter& p : b.params()) {
      if (p.trainable) out.push_back(&p);
    }
    return out;
  };
  disc_h_opt_ = optim::Adam(trainable(models_.Disc_H), cfg_.adam);
  disc_c_opt_ = optim::Adam(trainable(models_.Disc_C), cfg_.adam);
  lr_ = lr_schedule(0, cfg_);

  const std::size_t m = cfg_.unsup_size();
  if (cfg_.stages.unsup_clear) {
    auto pool = concat(dataset.select(Domain::syn_hazy, Split::train), dataset.select(Domain::real_hazy, Split::train));
    if (!pool.empty()) hazy_pool_.emplace(std::move(pool), m, Rng::derive(cfg_.seed, {kHazyPool}));
  }
  if (cfg_.stages.unsup_hazy) {
    auto pool = concat(dataset.select(Domain::syn_clear, Split::train), dataset.select(Domain::real_clear, Split::train));
    if (!pool.empty()) clear_pool_.emplace(std::move(pool), m, Rng::derive(cfg_.seed, {kClearPool}));
  }
}

Trainer::Images Trainer::load(const std::vector<std::size_t>& batch, Rng& rng, bool with_pair, Tensor* pair) const {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  std::vector<Tensor> images, pairs;
  Images out;
  for (std::size_t idx : batch) {
    const data::Sample& s = data_.samples.at(idx);
    if (with_pair) {
      if (!s.pair) throw std::invalid_argument("sample " + s.path + " has no clear pair");
      auto aug = data::augment({&s.image, &*s.pair}, rng, cfg_.augment);
      images.push_back(std::move(aug[0]));
      pairs.push_back(std::move(aug[1]));
    } else {
      images.push_back(std::move(data::augment({&s.image}, rng, cfg_.augment)[0]));
    }
    auto it = classes_.find(s.identity);
    if (it != classes_.end()) out.labels.push_back(it->second);
  }
  out.batch = stack(images);
  if (with_pair && pair != nullptr) *pair = stack(pairs);
  if (!out.labels.empty() && out.labels.size() != batch.size()) throw std::invalid_argument("batch mixes labelled and unlabelled samples");
  return out;
}

Tensor Trainer::load_plain(const std::vector<std::size_t>& batch, Rng& rng) const {
  std::vector<Tensor> images;
  for (std::size_t idx : batch) images.push_back(std::move(data::augment({&data_.samples.at(idx).image}, rng, cfg_.augment)[0]));
  return stack(images);
}

void Trainer::finish_generator(Graph& g, Var total, StepLog& log, bool apply) {
  if (observer_) observer_(log.stage, g);
  log.losses["total"] = total.value().item();
  // Non-finite intermediates reach the total; only then locate the first one.
  if (!std::isfinite(log.losses["total"]) && g.first_non_finite() != g.size()) {
    const auto& n = g.node(g.first_non_finite());
    throw std::runtime_error("non-finite value at node " + std::to_string(n.id) + " (" +
                             std::string(ad::op_name(n.kind)) + ") in stage " + std::string(loss::to_string(log.stage)));
  }
  if (!std::isfinite(log.losses["total"])) {
    throw std::runtime_error("non-finite total loss in stage " + std::string(loss::to_string(log.stage)));
  }
  log.lr = lr_;
  if (!apply) return;
  gen_opt_.zero_grad();
  g.backward(total);
  g.accumulate_param_grads();
  log.grad_norm = gen_opt_.grad_norm();
  gen_opt_.step(lr_);
}

void Trainer::discriminator_update(net::Block& disc, optim::Adam& opt, const Tensor& fake, data::RandomSampler& pool,
                                   std::size_t iter, std::uint64_t stream, StepLog& log, bool apply) {
  Rng rng = Rng::derive(cfg_.seed, {stream, iter});
  const Tensor real = load_plain(pool.next(), rng);
  Graph g;
  Var p_real = net::discriminate(g, disc, models_.config, g.input(real, false, "real"));
  Var p_fake = net::discriminate(g, disc, models_.config, g.input(fake, false, "fake"));
  Var d = loss::discriminator_loss(p_real, p_fake);
  log.losses["d_loss"] = d.value().item();
  if (!apply) return;
  opt.zero_grad();
  g.backward(d);
  g.accumulate_param_grads();
  opt.step(lr_ * cfg_.disc_lr_scale);
}

StepLog Trainer::supervised_step(const std::vector<std::size_t>& batch, std::size_t iter, bool apply) {
  StepLog log;
  log.iter = iter;
  log.stage = loss::Stage::supervised;
  Rng rng = Rng::derive(cfg_.seed, {kSupAugment, iter});
  Tensor clear;
  const Images hazy = load(batch, rng, true, &clear);
  if (hazy.labels.size() != batch.size()) throw std::invalid_argument("supervised batch contains unlabelled samples");

  const net::NetConfig& nc = models_.config;
  Graph g;
  Var h = g.input(hazy.batch, false, "syn_hazy");
  Var c = g.input(clear, false, "syn_clear");
  const net::EncodeOutput fh = net::encode(g, models_.E_H, nc, h, Mode::train);
  const net::EncodeOutput fc = net::encode(g, models_.E_C, nc, c, Mode::train);
  Var to_clear = net::decode_image(g, models_.D_C, nc, fh, Mode::train);
  Var to_hazy = net::decode_image(g, models_.D_H, nc, fc, Mode::train);
  const net::ReidOutput rh = net::reid_head(g, models_.D_ReID, nc, fh, Mode::train);
  const net::ReidOutput rc = net::reid_head(g, models_.D_ReID, nc, fc, Mode::train);

  std::map<std::string, Var> parts;
  parts["dts"] = ad::add(loss::l_domain_transform(to_clear, c), loss::l_domain_transform(to_hazy, h));
  parts["tri"] = both_streams_triplet(rh.embedding, rc.embedding, hazy.labels, cfg_.triplet);
  parts["id"] = average(loss::l_id_cross_entropy(rh.logits, hazy.labels), loss::l_id_cross_entropy(rc.logits, hazy.labels));
  for (const auto& [k, v] : parts) log.losses[k] = v.value().item();
  Var total = loss::compose_stage_loss(log.stage, parts, cfg_.weights);
  finish_generator(g, total, log, apply);
  return log;
}

StepLog Trainer::unsupervised_clear_step(const std::vector<std::size_t>& batch, std::size_t iter, bool apply) {
  if (!hazy_pool_) throw std::invalid_argument("no hazy images available for the hazy-domain discriminator");
  StepLog log;
  log.iter = iter;
  log.stage = loss::Stage::unsup_clear;
  Rng rng = Rng::derive(cfg_.seed, {kClearAugment, iter});
  const Images x = load(batch, rng, false);

  const net::NetConfig& nc = models_.config;
  Graph g;
  Var k = g.input(x.batch, false, "real_clear");
  const net::EncodeOutput fc = net::encode(g, models_.E_C, nc, k, Mode::train);
  Var rendered_hazy = net::decode_image(g, models_.D_H, nc, fc, Mode::train);
  g.set_tag(rendered_hazy, "rendered_hazy");
  const net::EncodeOutput fh = net::encode(g, models_.E_H, nc, rendered_hazy, Mode::train);
  Var cycled = net::decode_image(g, models_.D_C, nc, fh, Mode::train);
  const net::ReidOutput rc = net::reid_head(g, models_.D_ReID, nc, fc, Mode::train);
  const net::ReidOutput rh = net::reid_head(g, models_.D_ReID, nc, fh, Mode::train);

  double dm = 0.0;
  std::map<std::string, Var> parts;
  parts["rc"] = loss::l_render_consistency(k, cycled);
  parts["midc"] = loss::l_midc(k, rendered_hazy, cfg_.dark_channel, &dm);
  parts["cr"] = loss::l_colinear(k, rendered_hazy, cfg_.dark_channel);
  parts["dis"] = loss::generator_loss(net::discriminate(g, models_.Disc_H, nc, rendered_hazy, false));
  parts["ec"] = loss::l_embedding_consistency(rc.embedding, rh.embedding);
  if (cfg_.f_variant) {
    if (x.labels.size() != batch.size()) throw std::invalid_argument("f_variant needs labelled real batches");
    parts["tri"] = both_streams_triplet(rc.embedding, rh.embedding, x.labels, cfg_.triplet);
    parts["id"] = average(loss::l_id_cross_entropy(rc.logits, x.labels), loss::l_id_cross_entropy(rh.logits, x.labels));
  }
  for (const auto& [key, v] : parts) log.losses[key] = v.value().item();
  log.dm_fraction = dm;
  Var total = loss::compose_stage_loss(log.stage, parts, cfg_.weights, cfg_.f_variant);
  finish_generator(g, total, log, apply);
  discriminator_update(models_.Disc_H, disc_h_opt_, rendered_hazy.value(), *hazy_pool_, iter, kDiscH, log, apply);
  return log;
}

StepLog Trainer::unsupervised_hazy_step(const std::vector<std::size_t>& batch, std::size_t iter, bool apply) {
  if (!clear_pool_) throw std::invalid_argument("no clear images available for the clear-domain discriminator");
  StepLog log;
  log.iter = iter;
  log.stage = loss::Stage::unsup_hazy;
  Rng rng = Rng::derive(cfg_.seed, {kHazyAugment, iter});
  const Images x = load(batch, rng, false);

  const net::NetConfig& nc = models_.config;
  Graph g;
  Var k = g.input(x.batch, false, "real_hazy");
  const net::EncodeOutput fh = net::encode(g, models_.E_H, nc, k, Mode::train);
  Var rendered_clear = net::decode_image(g, models_.D_C, nc, fh, Mode::train);
  g.set_tag(rendered_clear, "rendered_clear");
  const net::EncodeOutput fc = net::encode(g, models_.E_C, nc, rendered_clear, Mode::train);
  Var cycled = net::decode_image(g, models_.D_H, nc, fc, Mode::train);
  const net::ReidOutput rh = net::reid_head(g, models_.D_ReID, nc, fh, Mode::train);
  const net::ReidOutput rc = net::reid_head(g, models_.D_ReID, nc, fc, Mode::train);

  std::map<std::string, Var> parts;
  parts["rc"] = loss::l_render_consistency(k, cycled);
  parts["dis"] = loss::generator_loss(net::discriminate(g, models_.Disc_C, nc, rendered_clear, false));
  parts["dc"] = loss::l_dark_channel(rendered_clear, cfg_.dark_channel);
  parts["tv"] = loss::l_total_variation(rendered_clear);
  parts["ec"] = loss::l_embedding_consistency(rh.embedding, rc.embedding);
  if (cfg_.f_variant) {
    if (x.labels.size() != batch.size()) throw std::invalid_argument("f_variant needs labelled real batches");
    parts["tri"] = both_streams_triplet(rh.embedding, rc.embedding, x.labels, cfg_.triplet);
    parts["id"] = average(loss::l_id_cross_entropy(rh.logits, x.labels), loss::l_id_cross_entropy(rc.logits, x.labels));
  }
  for (const auto& [key, v] : parts) log.losses[key] = v.value().item();
  Var total = loss::compose_stage_loss(log.stage, parts, cfg_.weights, cfg_.f_variant);
  finish_generator(g, total, log, apply);
  discriminator_update(models_.Disc_C, disc_c_opt_, rendered_clear.value(), *clear_pool_, iter, kDiscC, log, apply);
  return log;
}

std::size_t Trainer::iterations_per_epoch() const {
  if (cfg_.iterations_per_epoch > 0) return cfg_.iterations_per_epoch;
  std::set<std::uint32_t> ids;
  for (std::size_t i : data_.select(Domain::syn_hazy, Split::train)) ids.insert(data_.samples[i].identity);
  return std::max<std::size_t>(1, ids.size() / cfg_.p);
}

std::vector<StepLog> Trainer::fit(std::ostream* log) {
  const StageToggles& st = cfg_.stages;
  if (!st.supervised && !st.unsup_clear && !st.unsup_hazy) throw std::invalid_argument("all training stages disabled");

  std::optional<PkStream> sup;
  if (st.supervised) {
    auto pool = data_.select(Domain::syn_hazy, Split::train);
    if (pool.empty()) throw std::invalid_argument("no synthetic paired training samples");
    sup.emplace(data::PkSampler(data_, std::move(pool), cfg_.p, cfg_.k, Rng::derive(cfg_.seed, {kSupSampler})));
  }

  // Real batches are unlabelled draws of M images, or identity-balanced P x K
  // batches when the real stages are supervised too.
  struct RealStream {
    std::optional<PkStream> pk;
    std::optional<data::RandomSampler> plain;
    std::vector<std::size_t> next() { return pk ? pk->next() : plain->next(); }
  };
  auto make_real = [&](Domain d, std::uint64_t tag) {
    auto pool = data_.select(d, Split::train);
    if (pool.empty()) throw std::invalid_argument(std::string("no ") + std::string(data::to_string(d)) + " training samples");
    RealStream s;
    if (cfg_.f_variant) {
      s.pk.emplace(data::PkSampler(data_, std::move(pool), cfg_.p, cfg_.k, Rng::derive(cfg_.seed, {tag})));
    } else {
      s.plain.emplace(std::move(pool), cfg_.unsup_size(), Rng::derive(cfg_.seed, {tag}));
    }
    return s;
  };
  std::optional<RealStream> clear_stream, hazy_stream;
  if (st.unsup_clear) clear_stream = make_real(Domain::real_clear, kClearSampler);
  if (st.unsup_hazy) hazy_stream = make_real(Domain::real_hazy, kHazySampler);

  std::vector<StepLog> logs;
  auto emit = [&](StepLog l) {
    if (log != nullptr) *log << to_json(l) << '\n';
    logs.push_back(std::move(l));
  };
  const std::size_t per_epoch = iterations_per_epoch();
  std::size_t iter = 0;
  for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
    lr_ = lr_schedule(epoch, cfg_);
    for (std::size_t i = 0; i < per_epoch; ++i, ++iter) {
      if (sup) emit(supervised_step(sup->next(), iter));
      if (clear_stream) emit(unsupervised_clear_step(clear_stream->next(), iter));
      if (hazy_stream) emit(unsupervised_hazy_step(hazy_stream->next(), iter));
    }
  }
  return logs;
}

}  // namespace rvsl::train
