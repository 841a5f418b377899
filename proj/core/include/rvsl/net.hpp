#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rvsl/autodiff.hpp"

namespace rvsl::net {

struct NetConfig {
  std::size_t image_size = 64;
  std::size_t base_channels = 16;
  /// Convolution blocks owned by each encoder (E_H, E_C).
  std::size_t encoder_blocks = 2;
  /// Encoder blocks plus reid-decoder blocks. Holding this fixed while
  /// varying encoder_blocks keeps the retrieval path's depth matched.
  std::size_t total_blocks = 4;
  std::size_t embedding_dim = 64;
  std::size_t num_classes = 0;
  std::size_t discriminator_channels = 16;

  void validate() const;
  /// Output channels of convolution block b (1-based).
  std::size_t block_channels(std::size_t b) const { return base_channels << (b - 1); }

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Ordered, named parameters of one module. Lookups are by local name
/// ("block1.conv1.weight"); the stored name carries the block prefix.
class Block {
 public:
  Block() = default;
  explicit Block(std::string name) : name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }
  ad::Parameter& add(std::string_view local, Tensor value, bool trainable = true);
  ad::Parameter& at(std::string_view local);
  const ad::Parameter& at(std::string_view local) const;
  bool contains(std::string_view local) const;

  std::vector<ad::Parameter>& params() noexcept { return params_; }
  const std::vector<ad::Parameter>& params() const noexcept { return params_; }
  std::size_t scalar_count(bool trainable_only = true) const;

 private:
  std::string name_;
  std::vector<ad::Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// The five RVSL modules plus the two domain discriminators.
struct ModuleSet {
  NetConfig config;
  Block E_H{"E_H"}, E_C{"E_C"};
  Block D_H{"D_H"}, D_C{"D_C"};
  Block D_ReID{"D_ReID"};
  Block Disc_H{"Disc_H"}, Disc_C{"Disc_C"};

  std::vector<Block*> blocks();
  std::vector<const Block*> blocks() const;
  /// Looks up a parameter by its full name, e.g. "E_H.block1.conv1.weight".
  ad::Parameter& find(std::string_view full_name);
  /// Trainable parameters of the generator side (encoders, decoders, reid).
  std::vector<ad::Parameter*> generator_parameters();
  std::vector<ad::Parameter*> discriminator_parameters();
  void zero_grad();
};

enum class Mode : std::uint8_t { train, eval };

ModuleSet build_models(const NetConfig& cfg, std::uint64_t seed);

struct EncodeOutput {
  ad::Var deep;  ///< after the last encoder block
  ad::Var skip;  ///< after the first encoder block
};

/// `image` is N x 3 x S x S. The deep output is tagged "<block>:<input tag>"
/// so tests can audit which encoder saw which domain.
EncodeOutput encode(ad::Graph& g, Block& enc, const NetConfig& cfg, ad::Var image, Mode mode,
                    bool trainable = true);

/// Reconstructs an N x 3 x S x S image in (0,1).
ad::Var decode_image(ad::Graph& g, Block& dec, const NetConfig& cfg, const EncodeOutput& feat, Mode mode,
                     bool trainable = true);

struct ReidOutput {
  ad::Var embedding;  ///< N x embedding_dim, after the BN head
  ad::Var logits;     ///< N x num_classes; invalid in eval mode
};

ReidOutput reid_head(ad::Graph& g, Block& dreid, const NetConfig& cfg, const EncodeOutput& feat, Mode mode,
                     bool trainable = true);

/// Probability that each image of the batch is real: N x 1 in (0,1).
ad::Var discriminate(ad::Graph& g, Block& disc, const NetConfig& cfg, ad::Var image, bool trainable = true);

/// Retrieval embeddings (eval-mode BN, no decoders involved) for images of a
/// single domain kind.
Tensor embed(ModuleSet& models, const Tensor& images, bool hazy);

}  // namespace rvsl::net
