#include "rvsl/net.hpp"

#include <cmath>
#include <stdexcept>

#include "rvsl/errors.hpp"
#include "rvsl/rng.hpp"

namespace rvsl::net {
namespace {

using ad::Graph;
using ad::Var;

std::string local_name(const std::string& prefix, std::string_view leaf) {
  return prefix.empty() ? std::string(leaf) : prefix + "." + std::string(leaf);
}

// Parameter factory with one derived random stream per parameter, so adding
// a parameter never shifts the initial values of the others.
class Initializer {
 public:
  Initializer(std::uint64_t seed, std::uint64_t block_tag) : seed_(seed), tag_(block_tag) {}

  void kaiming(Block& b, const std::string& name, Shape shape, std::size_t fan_in) {
    Rng rng = Rng::derive(seed_, {tag_, counter_++});
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.normal(0.0, sd);
    b.add(name, std::move(t));
  }

  void conv(Block& b, const std::string& prefix, std::size_t in, std::size_t out, std::size_t k) {
    kaiming(b, local_name(prefix, "weight"), {out, in, k, k}, in * k * k);
    b.add(local_name(prefix, "bias"), Tensor({out}, 0.0));
  }

  // Transposed weights are Cin x Cout x k x k; fan-in as for the adjoint conv.
  void conv_t(Block& b, const std::string& prefix, std::size_t in, std::size_t out, std::size_t k) {
    kaiming(b, local_name(prefix, "weight"), {in, out, k, k}, out * k * k);
    b.add(local_name(prefix, "bias"), Tensor({out}, 0.0));
  }

  void dense(Block& b, const std::string& prefix, std::size_t in, std::size_t out) {
    kaiming(b, local_name(prefix, "weight"), {out, in}, in);
    b.add(local_name(prefix, "bias"), Tensor({out}, 0.0));
  }

  void bn(Block& b, const std::string& prefix, std::size_t c) {
    b.add(local_name(prefix, "gamma"), Tensor({c}, 1.0));
    b.add(local_name(prefix, "beta"), Tensor({c}, 0.0));
    b.add(local_name(prefix, "running_mean"), Tensor({c}, 0.0), false);
    b.add(local_name(prefix, "running_var"), Tensor({c}, 1.0), false);
  }

 private:
  std::uint64_t seed_, tag_;
  std::uint64_t counter_ = 0;
};

void add_conv_block(Initializer& init, Block& b, const std::string& prefix, std::size_t in, std::size_t out) {
  init.conv(b, prefix + ".conv1", in, out, 3);
  init.bn(b, prefix + ".bn1", out);
  init.conv(b, prefix + ".conv2", out, out, 3);
  init.bn(b, prefix + ".bn2", out);
}

void build_encoder(Initializer init, Block& b, const NetConfig& cfg) {
  std::size_t in = 3;
  for (std::size_t i = 1; i <= cfg.encoder_blocks; ++i) {
    add_conv_block(init, b, "block" + std::to_string(i), in, cfg.block_channels(i));
    in = cfg.block_channels(i);
  }
}

void build_decoder(Initializer init, Block& b, const NetConfig& cfg) {
  // Levels above the skip resolution: double conv, then upsample.
  for (std::size_t l = cfg.encoder_blocks; l >= 2; --l) {
    const std::size_t c = cfg.block_channels(l);
    add_conv_block(init, b, "level" + std::to_string(l), c, c);
    init.conv_t(b, "level" + std::to_string(l) + ".up", c, cfg.block_channels(l - 1), 4);
  }
  const std::size_t base = cfg.base_channels;
  add_conv_block(init, b, "fuse", 2 * base, base);
  init.conv_t(b, "out", base, 3, 4);
}

void build_reid(Initializer init, Block& b, const NetConfig& cfg) {
  std::size_t in = cfg.block_channels(cfg.encoder_blocks);
  for (std::size_t i = cfg.encoder_blocks + 1; i <= cfg.total_blocks; ++i) {
    add_conv_block(init, b, "block" + std::to_string(i), in, cfg.block_channels(i));
    in = cfg.block_channels(i);
  }
  init.conv(b, "project", in, cfg.embedding_dim, 1);
  init.bn(b, "head_bn", cfg.embedding_dim);
  if (cfg.num_classes > 0) init.dense(b, "classifier", cfg.embedding_dim, cfg.num_classes);
}

void build_discriminator(Initializer init, Block& b, const NetConfig& cfg) {
  const std::size_t d = cfg.discriminator_channels;
  init.conv(b, "conv1", 3, d, 3);
  init.conv(b, "conv2", d, 2 * d, 3);
  init.conv(b, "conv3", 2 * d, 4 * d, 3);
  init.dense(b, "fc", 4 * d, 1);
}

// Binds parameters of one block into a graph with a shared trainable flag.
struct Binder {
  Graph& g;
  Block& b;
  bool trainable;
  Mode mode;

  Var p(const std::string& name) { return g.param(b.at(name), trainable); }

  Var conv(Var x, const std::string& prefix, std::size_t stride, std::size_t padding) {
    return ad::conv2d(x, p(prefix + ".weight"), p(prefix + ".bias"), stride, padding);
  }
  Var conv_t(Var x, const std::string& prefix) {
    return ad::conv2d_transpose(x, p(prefix + ".weight"), p(prefix + ".bias"), 2, 1);
  }
  Var bn(Var x, const std::string& prefix) {
    ad::BatchNormStats stats{&b.at(prefix + ".running_mean"), &b.at(prefix + ".running_var")};
    return ad::batch_norm(x, p(prefix + ".gamma"), p(prefix + ".beta"), mode == Mode::train, stats);
  }
  Var block(Var x, const std::string& prefix, std::size_t first_stride) {
    x = ad::relu(bn(conv(x, prefix + ".conv1", first_stride, 1), prefix + ".bn1"));
    return ad::relu(bn(conv(x, prefix + ".conv2", 1, 1), prefix + ".bn2"));
  }
};

void check_image(const NetConfig& cfg, Var image, const char* who) {
  const Shape s = image.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != cfg.image_size || s[3] != cfg.image_size) {
    throw ShapeError(std::string(who) + ": expected Nx3x" + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.image_size) + " input, got " + shape_str(s));
  }
}

}  // namespace

void NetConfig::validate() const {
  if (encoder_blocks < 1 || encoder_blocks > 4) throw std::invalid_argument("encoder_blocks must be in 1..4");
  if (total_blocks < encoder_blocks) throw std::invalid_argument("total_blocks must be >= encoder_blocks");
  if (total_blocks > 6) throw std::invalid_argument("total_blocks must be <= 6");
  if (embedding_dim < 8) throw std::invalid_argument("embedding_dim must be >= 8");
  if (base_channels < 1 || discriminator_channels < 1) throw std::invalid_argument("channel counts must be positive");
  if (image_size < 8 || image_size % (std::size_t{1} << total_blocks) != 0) {
    throw std::invalid_argument("image_size must be divisible by 2^total_blocks");
  }
}

ad::Parameter& Block::add(std::string_view local, Tensor value, bool trainable) {
  if (index_.contains(local)) throw std::logic_error("duplicate parameter " + std::string(local));
  index_.emplace(std::string(local), params_.size());
  ad::Parameter p;
  p.name = name_ + "." + std::string(local);
  p.grad = Tensor(value.shape(), 0.0);
  p.value = std::move(value);
  p.trainable = trainable;
  params_.push_back(std::move(p));
  return params_.back();
}

ad::Parameter& Block::at(std::string_view local) {
  auto it = index_.find(local);
  if (it == index_.end()) throw std::out_of_range("no parameter " + name_ + "." + std::string(local));
  return params_[it->second];
}

const ad::Parameter& Block::at(std::string_view local) const {
  auto it = index_.find(local);
  if (it == index_.end()) throw std::out_of_range("no parameter " + name_ + "." + std::string(local));
  return params_[it->second];
}

bool Block::contains(std::string_view local) const { return index_.contains(local); }

std::size_t Block::scalar_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const ad::Parameter& p : params_) {
    if (p.trainable || !trainable_only) n += p.value.size();
  }
  return n;
}

std::vector<Block*> ModuleSet::blocks() { return {&E_H, &E_C, &D_H, &D_C, &D_ReID, &Disc_H, &Disc_C}; }

std::vector<const Block*> ModuleSet::blocks() const {
  return {&E_H, &E_C, &D_H, &D_C, &D_ReID, &Disc_H, &Disc_C};
}

ad::Parameter& ModuleSet::find(std::string_view full_name) {
  const auto dot = full_name.find('.');
  if (dot != std::string_view::npos) {
    for (Block* b : blocks()) {
      if (b->name() == full_name.substr(0, dot)) return b->at(full_name.substr(dot + 1));
    }
  }
  throw std::out_of_range("no parameter " + std::string(full_name));
}

std::vector<ad::Parameter*> ModuleSet::generator_parameters() {
  std::vector<ad::Parameter*> out;
  for (Block* b : {&E_H, &E_C, &D_H, &D_C, &D_ReID}) {
    for (ad::Parameter& p : b->params()) {
      if (p.trainable) out.push_back(&p);
    }
  }
  return out;
}

std::vector<ad::Parameter*> ModuleSet::discriminator_parameters() {
  std::vector<ad::Parameter*> out;
  for (Block* b : {&Disc_H, &Disc_C}) {
    for (ad::Parameter& p : b->params()) {
      if (p.trainable) out.push_back(&p);
    }
  }
  return out;
}

void ModuleSet::zero_grad() {
  for (Block* b : blocks()) {
    for (ad::Parameter& p : b->params()) p.zero_grad();
  }
}

ModuleSet build_models(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModuleSet m;
  m.config = cfg;
  build_encoder(Initializer(seed, 1), m.E_H, cfg);
  build_encoder(Initializer(seed, 2), m.E_C, cfg);
  build_decoder(Initializer(seed, 3), m.D_H, cfg);
  build_decoder(Initializer(seed, 4), m.D_C, cfg);
  build_reid(Initializer(seed, 5), m.D_ReID, cfg);
  build_discriminator(Initializer(seed, 6), m.Disc_H, cfg);
  build_discriminator(Initializer(seed, 7), m.Disc_C, cfg);
  return m;
}

EncodeOutput encode(Graph& g, Block& enc, const NetConfig& cfg, Var image, Mode mode, bool trainable) {
  check_image(cfg, image, "encode");
  Binder bind{g, enc, trainable, mode};
  EncodeOutput out;
  Var x = image;
  for (std::size_t i = 1; i <= cfg.encoder_blocks; ++i) {
    x = bind.block(x, "block" + std::to_string(i), 2);
    if (i == 1) out.skip = x;
  }
  out.deep = x;
  g.set_tag(out.deep, enc.name() + ":" + g.node(image.id()).tag);
  return out;
}

Var decode_image(Graph& g, Block& dec, const NetConfig& cfg, const EncodeOutput& feat, Mode mode, bool trainable) {
  const std::size_t deep_size = cfg.image_size >> cfg.encoder_blocks;
  const Shape ds = feat.deep.shape();
  if (ds.size() != 4 || ds[1] != cfg.block_channels(cfg.encoder_blocks) || ds[2] != deep_size ||
      ds[3] != deep_size) {
    throw ShapeError("decode_image: deep features have shape " + shape_str(ds));
  }
  Binder bind{g, dec, trainable, mode};
  Var x = feat.deep;
  for (std::size_t l = cfg.encoder_blocks; l >= 2; --l) {
    const std::string level = "level" + std::to_string(l);
    x = bind.conv_t(bind.block(x, level, 1), level + ".up");
  }
  x = ad::concat_channels(x, feat.skip);
  x = bind.block(x, "fuse", 1);
  return ad::sigmoid(bind.conv_t(x, "out"));
}

ReidOutput reid_head(Graph& g, Block& dreid, const NetConfig& cfg, const EncodeOutput& feat, Mode mode,
                     bool trainable) {
  if (mode == Mode::train && cfg.num_classes == 0) {
    throw std::invalid_argument("reid_head: num_classes must be set for training");
  }
  Binder bind{g, dreid, trainable, mode};
  Var x = feat.deep;
  for (std::size_t i = cfg.encoder_blocks + 1; i <= cfg.total_blocks; ++i) {
    x = bind.block(x, "block" + std::to_string(i), 2);
  }
  x = ad::global_avg_pool(bind.conv(x, "project", 1, 0));
  ReidOutput out;
  out.embedding = bind.bn(x, "head_bn");
  if (mode == Mode::train) {
    out.logits = ad::dense(out.embedding, bind.p("classifier.weight"), bind.p("classifier.bias"));
  }
  return out;
}

Var discriminate(Graph& g, Block& disc, const NetConfig& cfg, Var image, bool trainable) {
  check_image(cfg, image, "discriminate");
  Binder bind{g, disc, trainable, Mode::train};
  Var x = ad::relu(bind.conv(image, "conv1", 2, 1));
  x = ad::relu(bind.conv(x, "conv2", 2, 1));
  x = ad::relu(bind.conv(x, "conv3", 2, 1));
  x = ad::global_avg_pool(x);
  return ad::sigmoid(ad::dense(x, bind.p("fc.weight"), bind.p("fc.bias")));
}

Tensor embed(ModuleSet& models, const Tensor& images, bool hazy) {
  Graph g;
  Var x = g.input(images, false, hazy ? "hazy" : "clear");
  const EncodeOutput f = encode(g, hazy ? models.E_H : models.E_C, models.config, x, Mode::eval, false);
  return reid_head(g, models.D_ReID, models.config, f, Mode::eval, false).embedding.value();
}

}  // namespace rvsl::net
