#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rvsl/losses.hpp"
#include "rvsl/net.hpp"
#include "rvsl/optim.hpp"
#include "rvsl/toyvehicle.hpp"

namespace rvsl::train {

struct StageToggles {
  bool supervised = true;
  bool unsup_clear = true;
  bool unsup_hazy = true;
  friend bool operator==(const StageToggles&, const StageToggles&) = default;
};

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t p = 4;  ///< identities per supervised batch
  std::size_t k = 4;  ///< views per identity; supervised batches hold 2*P*K images
  /// Images per unsupervised batch (M). 0 means P*K.
  std::size_t unsup_batch = 0;
  /// Iterations per epoch; 0 means one pass over the supervised identities.
  std::size_t iterations_per_epoch = 0;
  double lr_init = 1.09e-5;
  double lr_peak = 1e-4;
  std::size_t warmup_epochs = 10;
  double decay = 0.6;
  std::size_t decay_interval = 10;
  /// Learning rate of the discriminators relative to the generator schedule.
  double disc_lr_scale = 1.0;
  optim::AdamConfig adam;
  std::uint64_t seed = 0;
  loss::LossWeights weights;
  loss::TripletConfig triplet;
  haze::DarkChannelConfig dark_channel;
  data::AugmentConfig augment;
  StageToggles stages;
  bool f_variant = false;

  void validate() const;
  std::size_t unsup_size() const { return unsup_batch == 0 ? p * k : unsup_batch; }
};

/// Linear warm-up from lr_init to lr_peak, then step decay by `decay` every
/// `decay_interval` epochs.
double lr_schedule(std::size_t epoch, const TrainConfig& cfg);

struct StepLog {
  std::size_t iter = 0;
  loss::Stage stage = loss::Stage::supervised;
  std::map<std::string, double> losses;
  double lr = 0.0;
  double grad_norm = 0.0;
  std::optional<double> dm_fraction;
};

std::string to_json(const StepLog& log);

/// Maps identity labels onto classifier rows: synthetic training identities
/// first, then (for the fully supervised variant) real training identities.
std::map<std::uint32_t, std::uint32_t> class_map(const data::Dataset& dataset, bool include_real);

/// Owns the optimizers and sampling streams for one training run over a
/// caller-owned ModuleSet.
class Trainer {
 public:
  Trainer(net::ModuleSet& models, const data::Dataset& dataset, TrainConfig cfg);

  /// One step of each stage on an explicit batch of sample indices. With
  /// apply == false the losses are computed but no parameter changes (batch
  /// norm running statistics still move).
  StepLog supervised_step(const std::vector<std::size_t>& batch, std::size_t iter, bool apply = true);
  StepLog unsupervised_clear_step(const std::vector<std::size_t>& batch, std::size_t iter, bool apply = true);
  StepLog unsupervised_hazy_step(const std::vector<std::size_t>& batch, std::size_t iter, bool apply = true);

  /// Runs the full schedule. Each StepLog is also written as one JSON line to
  /// `log` when given.
  std::vector<StepLog> fit(std::ostream* log = nullptr);

  std::size_t iterations_per_epoch() const;

  /// Sees every generator graph after its forward pass, e.g. to audit which
  /// encoder consumed which input.
  using GraphObserver = std::function<void(loss::Stage, const ad::Graph&)>;
  void set_graph_observer(GraphObserver observer) { observer_ = std::move(observer); }

  double current_lr() const { return lr_; }
  const std::map<std::uint32_t, std::uint32_t>& classes() const { return classes_; }

 private:
  struct Images {
    Tensor batch;
    std::vector<std::uint32_t> labels;
  };
  Images load(const std::vector<std::size_t>& batch, Rng& rng, bool with_pair, Tensor* pair = nullptr) const;
  Tensor load_plain(const std::vector<std::size_t>& batch, Rng& rng) const;
  void discriminator_update(net::Block& disc, optim::Adam& opt, const Tensor& fake, data::RandomSampler& pool,
                            std::size_t iter, std::uint64_t stream, StepLog& log, bool apply);
  void finish_generator(ad::Graph& g, ad::Var total, StepLog& log, bool apply);

  net::ModuleSet& models_;
  const data::Dataset& data_;
  TrainConfig cfg_;
  std::map<std::uint32_t, std::uint32_t> classes_;
  optim::Adam gen_opt_;
  optim::Adam disc_h_opt_;
  optim::Adam disc_c_opt_;
  std::optional<data::RandomSampler> hazy_pool_;
  std::optional<data::RandomSampler> clear_pool_;
  double lr_ = 0.0;
  GraphObserver observer_;
};

}  // namespace rvsl::train
