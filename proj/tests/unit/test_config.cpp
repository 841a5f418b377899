#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "fixtures.hpp"
#include "rvsl/config.hpp"
#include "rvsl/errors.hpp"

using namespace rvsl;

namespace {

// Key reported for a rejected document, or "" when it parses.
std::string rejected_key(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

}  // namespace

TEST_CASE("empty document gives the defaults") {
  const RunConfig c = parse_config("{}");
  CHECK(c.data.image_size == 64);
  CHECK(c.net.image_size == 64);
  CHECK(c.net.encoder_blocks == 2);
  CHECK(c.train.epochs == 40);
  CHECK(c.train.lr_init == 1.09e-5);
  CHECK(c.train.lr_peak == 1e-4);
  CHECK(c.train.decay == 0.6);
  CHECK(c.train.triplet.margin == 0.3);
  CHECK(c.train.weights == loss::LossWeights{});
  CHECK(c.train.stages == train::StageToggles{});
  CHECK(c.eval.ranks == std::vector<std::size_t>{1, 5, 10});
}

TEST_CASE("dump and parse round trip") {
  RunConfig c = fixture::tiny_run();
  c.train.weights.cr = 0.5;
  c.train.stages.unsup_hazy = false;
  c.train.f_variant = true;
  c.data.real_haze.beta_hi = 2.0;
  c.eval.ranks = {1, 3};
  const std::string text = dump_config(c);
  const RunConfig back = parse_config(text);
  CHECK(dump_config(back) == text);
  CHECK(back.train.weights == c.train.weights);
  CHECK(back.train.stages == c.train.stages);
  CHECK(back.net.total_blocks == 3);
  CHECK(back.data.real_haze.beta_hi == 2.0);
  CHECK(back.eval.ranks == c.eval.ranks);

  const auto j = nlohmann::json::parse(text);
  CHECK(j["train"]["weights"]["cr"].get<double>() == 0.5);
  CHECK(j["net"].contains("num_classes") == false);
}

TEST_CASE("partial documents merge over defaults") {
  const RunConfig c = parse_config(R"({"data":{"image_size":32},"train":{"weights":{"tv":2.5}}})");
  CHECK(c.data.image_size == 32);
  CHECK(c.net.image_size == 32);  // follows the data unless given
  CHECK(c.train.weights.tv == 2.5);
  CHECK(c.train.weights.dc == 1.0);
}

TEST_CASE("bad documents name the offending key") {
  CHECK(rejected_key(R"({"train":{"margn":0.3}})") == "train.margn");
  CHECK(rejected_key(R"({"bogus":1})") == "bogus");
  CHECK(rejected_key(R"({"train":{"weights":{"xx":1}}})") == "train.weights.xx");
  CHECK(rejected_key(R"({"train":{"margin":0}})") == "train.margin");
  CHECK(rejected_key(R"({"train":{"margin":"big"}})") == "train.margin");
  CHECK(rejected_key(R"({"train":{"p":1}})") == "train.p");
  CHECK(rejected_key(R"({"train":{"epochs":-3}})") == "train.epochs");
  CHECK(rejected_key(R"({"train":{"decay":1.5}})") == "train.decay");
  CHECK(rejected_key(R"({"train":{"dark_channel_patch":4}})") == "train.dark_channel_patch");
  CHECK(rejected_key(R"({"train":{"weights":{"midc":-1}}})") == "train.weights.midc");
  CHECK(rejected_key(R"({"train":{"augment":{"flip_prob":2}}})") == "train.augment.flip_prob");
  CHECK(rejected_key(R"({"train":{"stages":{"supervised":1}}})") == "train.stages.supervised");
  CHECK(rejected_key(R"({"net":{"encoder_blocks":5}})") == "net.encoder_blocks");
  CHECK(rejected_key(R"({"net":{"embedding_dim":4}})") == "net.embedding_dim");
  CHECK(rejected_key(R"({"net":{"image_size":32}})") == "net.image_size");
  CHECK(rejected_key(R"({"eval":{"ranks":[0]}})") == "eval.ranks");
  CHECK(rejected_key(R"({"eval":{"ranks":[]}})") == "eval.ranks");
  CHECK(rejected_key(R"({"data":{"image_size":30}})") == "net");
  CHECK(rejected_key(R"({"data":{"syn_views":1}})") == "data");
  CHECK(rejected_key("[1,2]") == "<document>");
  CHECK(rejected_key("{not json") == "<document>");
  CHECK(rejected_key("{}").empty());
}

TEST_CASE("config files") {
  fixture::TempDir dir("rvsl_cfg");
  CHECK_THROWS_AS(load_config(dir.path / "missing.json"), ConfigError);
  std::ofstream(dir.path / "c.json") << R"({"train":{"epochs":3}})";
  CHECK(load_config(dir.path / "c.json").train.epochs == 3);
}
