#include <benchmark/benchmark.h>

#include "rvsl/autodiff.hpp"
#include "rvsl/haze.hpp"
#include "rvsl/net.hpp"
#include "rvsl/retrieval.hpp"
#include "rvsl/rng.hpp"

using namespace rvsl;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(0.0, 1.0);
  return t;
}

ad::Parameter param(const std::string& name, Shape shape, std::uint64_t seed) {
  ad::Parameter p;
  p.name = name;
  p.value = uniform(std::move(shape), seed);
  p.grad = Tensor(p.value.shape(), 0.0);
  return p;
}

// Batch 16, C -> C channels, 3x3, stride 1, at the given resolution.
void BM_Conv2dForward(benchmark::State& st) {
  const auto C = static_cast<std::size_t>(st.range(0)), S = static_cast<std::size_t>(st.range(1));
  const Tensor x = uniform({16, C, S, S}, 1);
  ad::Parameter w = param("w", {C, C, 3, 3}, 2), b = param("b", {C}, 3);
  for (auto _ : st) {
    ad::Graph g;
    benchmark::DoNotOptimize(ad::conv2d(g.constant(x), g.param(w), g.param(b), 1, 1).value().raw());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(16 * C * C * 9 * S * S));
}
BENCHMARK(BM_Conv2dForward)->Args({16, 32})->Args({32, 16})->Unit(benchmark::kMillisecond);

void BM_Conv2dForwardBackward(benchmark::State& st) {
  const auto C = static_cast<std::size_t>(st.range(0)), S = static_cast<std::size_t>(st.range(1));
  ad::Parameter x = param("x", {16, C, S, S}, 1);
  ad::Parameter w = param("w", {C, C, 3, 3}, 2), b = param("b", {C}, 3);
  for (auto _ : st) {
    ad::Graph g;
    g.backward(ad::sum(ad::conv2d(g.param(x), g.param(w), g.param(b), 1, 1)));
    benchmark::DoNotOptimize(g.size());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({16, 32})->Args({32, 16})->Unit(benchmark::kMillisecond);

void BM_DarkChannel(benchmark::State& st) {
  const auto S = static_cast<std::size_t>(st.range(0));
  const Tensor img = uniform({3, S, S}, 4);
  for (auto _ : st) benchmark::DoNotOptimize(haze::dark_channel(img, {15}).raw());
}
BENCHMARK(BM_DarkChannel)->Arg(64)->Arg(256);

void BM_Evaluate(benchmark::State& st) {
  const auto ids = static_cast<std::size_t>(st.range(0));
  eval::EmbeddingSet set;
  set.embeddings = uniform({ids * 8, 64}, 5);
  for (std::size_t i = 0; i < ids; ++i) {
    for (std::size_t v = 0; v < 8; ++v) {
      set.ids.push_back(static_cast<std::uint32_t>(i));
      set.roles.push_back(v == 0 ? eval::Role::probe : eval::Role::gallery);
    }
  }
  for (auto _ : st) benchmark::DoNotOptimize(eval::evaluate(set).mAP);
}
BENCHMARK(BM_Evaluate)->Arg(30)->Arg(300);

void BM_TrainForwardBackward(benchmark::State& st) {
  net::NetConfig cfg;
  cfg.num_classes = 30;
  net::ModuleSet m = net::build_models(cfg, 6);
  const Tensor x = uniform({16, 3, 64, 64}, 7);
  for (auto _ : st) {
    ad::Graph g;
    const net::EncodeOutput f = net::encode(g, m.E_H, cfg, g.constant(x), net::Mode::train);
    ad::Var img = net::decode_image(g, m.D_C, cfg, f, net::Mode::train);
    ad::Var emb = net::reid_head(g, m.D_ReID, cfg, f, net::Mode::train).embedding;
    g.backward(ad::add(ad::sum(img), ad::sum(emb)));
  }
}
BENCHMARK(BM_TrainForwardBackward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
