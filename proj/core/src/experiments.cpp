#include "rvsl/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>

#include "rvsl/checkpoint.hpp"
#include "rvsl/losses.hpp"

namespace rvsl::exp {

net::ModuleSet build_for(const RunConfig& cfg, const data::Dataset& dataset) {
  net::NetConfig nc = cfg.net;
  nc.num_classes = std::max<std::size_t>(1, train::class_map(dataset, cfg.train.f_variant).size());
  return net::build_models(nc, cfg.train.seed);
}

RunOutcome train_and_evaluate(const RunConfig& cfg, const data::Dataset& dataset, std::ostream* log) {
  const auto t0 = std::chrono::steady_clock::now();
  net::ModuleSet models = build_for(cfg, dataset);
  train::Trainer trainer(models, dataset, cfg.train);
  RunOutcome out;
  out.steps = trainer.fit(log).size();
  out.real = eval::evaluate_domain(models, dataset, true, cfg.eval.ranks);
  if (!dataset.select(data::Domain::syn_hazy, data::Split::probe).empty()) {
    out.syn = eval::evaluate_domain(models, dataset, false, cfg.eval.ranks);
  }
  out.checkpoint = net::serialize(models);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::vector<Variant> stage_variants() {
  return {
      {"Syn", [](RunConfig& c) { c.train.stages = {true, false, false}; }},
      {"Syn+RC", [](RunConfig& c) { c.train.stages = {true, true, false}; }},
      {"Syn+RH", [](RunConfig& c) { c.train.stages = {true, false, true}; }},
      {"Full", [](RunConfig& c) { c.train.stages = {true, true, true}; }},
  };
}

std::vector<Variant> loss_variants() {
  return {
      {"Full", [](RunConfig&) {}},
      {"w/o CR & MIDC",
       [](RunConfig& c) {
         c.train.weights.cr = 0.0;
         c.train.weights.midc = 0.0;
       }},
      {"w/o DC & TV",
       [](RunConfig& c) {
         c.train.weights.dc = 0.0;
         c.train.weights.tv = 0.0;
       }},
  };
}

std::vector<Variant> depth_variants(const RunConfig& base) {
  std::vector<Variant> out;
  for (std::size_t b = 1; b <= std::min<std::size_t>(4, base.net.total_blocks); ++b) {
    out.push_back({"Conv_" + std::to_string(b), [b](RunConfig& c) { c.net.encoder_blocks = b; }});
  }
  return out;
}

std::vector<Variant> f_variants() {
  return {
      {"Full", [](RunConfig& c) { c.train.f_variant = false; }},
      {"Full-F", [](RunConfig& c) { c.train.f_variant = true; }},
  };
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<Variant>& variants,
                                      const std::vector<std::uint64_t>& seeds, const Progress& progress) {
  std::vector<AblationRow> rows(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) rows[v].name = variants[v].name;
  for (std::uint64_t seed : seeds) {
    const data::Dataset dataset = data::generate_dataset(base.data, seed);
    for (std::size_t v = 0; v < variants.size(); ++v) {
      RunConfig cfg = base;
      cfg.data_seed = seed;
      cfg.train.seed = seed;
      variants[v].apply(cfg);
      cfg.validate();
      const RunOutcome r = train_and_evaluate(cfg, dataset);
      rows[v].maps.push_back(r.real.mAP);
      if (progress) progress(variants[v].name, seed, r);
    }
  }
  for (AblationRow& r : rows) r.median = median(r.maps);
  return rows;
}

std::string format_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "| variant | per-seed mAP (%) | median mAP (%) |\n|---|---|---|\n";
  char buf[32];
  for (const AblationRow& r : rows) {
    os << "| " << r.name << " | ";
    for (std::size_t i = 0; i < r.maps.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.2f", 100.0 * r.maps[i]);
      os << (i ? ", " : "") << buf;
    }
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * r.median);
    os << " | " << buf << " |\n";
  }
  return os.str();
}

namespace {

using ad::Graph;
using ad::Parameter;
using ad::Var;

Parameter random_param(const std::string& name, Shape shape, Rng& rng, double lo, double hi) {
  Parameter p;
  p.name = name;
  p.value = Tensor(std::move(shape));
  for (double& v : p.value.data()) v = rng.uniform(lo, hi);
  p.grad = Tensor(p.value.shape(), 0.0);
  return p;
}

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

std::vector<GradCase> run_gradient_suite(std::uint64_t seed) {
  std::vector<GradCase> out;
  Rng rng(seed);
  const double loss_tol = 1e-4, path_tol = 1e-3;
  ad::GradCheckOptions opts;
  opts.seed = seed;

  auto run = [&](const std::string& name, double tol, const ad::Recipe& recipe, ad::GradCheckOptions o) {
    out.push_back({name, tol, ad::grad_check(recipe, tol, o)});
  };

  const Shape img{2, 3, 8, 8};
  {
    Parameter pred = random_param("pred", img, rng, 0.05, 0.95);
    const Tensor target = random_tensor(img, rng, 0.05, 0.95);
    run("l_domain_transform", loss_tol,
        [&](Graph& g) { return loss::l_domain_transform(g.param(pred), g.constant(target)); }, opts);
    run("l_render_consistency", loss_tol,
        [&](Graph& g) { return loss::l_render_consistency(g.constant(target), g.param(pred)); }, opts);
  }
  {
    Parameter clear = random_param("clear", img, rng, 0.0, 1.0);
    Parameter hazy = random_param("hazy", img, rng, 0.0, 1.0);
    const haze::DarkChannelConfig dc{3};
    run("l_midc", loss_tol,
        [&](Graph& g) { return loss::l_midc(g.param(clear), g.param(hazy), dc); }, opts);
    run("l_colinear", loss_tol,
        [&](Graph& g) { return loss::l_colinear(g.param(clear), g.param(hazy), dc); }, opts);
    run("l_dark_channel", loss_tol, [&](Graph& g) { return loss::l_dark_channel(g.param(hazy), dc); }, opts);
    run("l_total_variation", loss_tol, [&](Graph& g) { return loss::l_total_variation(g.param(clear)); }, opts);
  }
  {
    Parameter emb = random_param("embeddings", {12, 6}, rng, -1.0, 1.0);
    const std::vector<std::uint32_t> labels{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3};
    run("l_triplet_batch_hard", loss_tol,
        [&](Graph& g) { return loss::l_triplet_batch_hard(g.param(emb), labels, {0.3}); }, opts);
    Parameter logits = random_param("logits", {12, 5}, rng, -3.0, 3.0);
    run("l_id_cross_entropy", loss_tol, [&](Graph& g) { return loss::l_id_cross_entropy(g.param(logits), labels); },
        opts);
    const Tensor other = random_tensor({12, 6}, rng, -1.0, 1.0);
    run("l_embedding_consistency", loss_tol,
        [&](Graph& g) { return loss::l_embedding_consistency(g.param(emb), g.constant(other)); }, opts);
  }

  net::NetConfig small;
  small.image_size = 8;
  small.base_channels = 2;
  small.encoder_blocks = 1;
  small.total_blocks = 2;
  small.embedding_dim = 8;
  small.num_classes = 3;
  small.discriminator_channels = 2;
  {
    net::ModuleSet m = net::build_models(small, seed);
    Parameter fake = random_param("fake", {3, 3, 8, 8}, rng, 0.0, 1.0);
    const Tensor real = random_tensor({3, 3, 8, 8}, rng, 0.0, 1.0);
    // Generator objective w.r.t. the fake images, discriminator frozen.
    run("g_loss", loss_tol,
        [&](Graph& g) {
          return loss::generator_loss(net::discriminate(g, m.Disc_H, small, g.param(fake), false));
        },
        opts);
    // Discriminator objective w.r.t. the discriminator weights.
    run("d_loss", loss_tol,
        [&](Graph& g) {
          Var pr = net::discriminate(g, m.Disc_H, small, g.constant(real));
          Var pf = net::discriminate(g, m.Disc_H, small, g.constant(fake.value));
          return loss::discriminator_loss(pr, pf);
        },
        opts);
  }

  ad::GradCheckOptions path_opts = opts;
  path_opts.max_probes_per_param = 24;
  {
    net::ModuleSet m = net::build_models(small, seed + 1);
    const Tensor x = random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
    Rng wr(seed + 2);
    const Tensor w_deep = random_tensor({2, 2, 4, 4}, wr, -1.0, 1.0);
    run("encode", path_tol,
        [&](Graph& g) {
          const net::EncodeOutput f = net::encode(g, m.E_H, small, g.constant(x), net::Mode::train);
          return ad::sum(ad::mul(f.deep, g.constant(w_deep)));
        },
        path_opts);
    const Tensor w_emb = random_tensor({2, 8}, wr, -1.0, 1.0);
    const Tensor w_logit = random_tensor({2, 3}, wr, -1.0, 1.0);
    run("reid_head", path_tol,
        [&](Graph& g) {
          const net::EncodeOutput f = net::encode(g, m.E_C, small, g.constant(x), net::Mode::train);
          const net::ReidOutput r = net::reid_head(g, m.D_ReID, small, f, net::Mode::train);
          return ad::add(ad::sum(ad::mul(r.embedding, g.constant(w_emb))),
                         ad::sum(ad::mul(r.logits, g.constant(w_logit))));
        },
        path_opts);
    const Tensor w_p = random_tensor({2, 1}, wr, -1.0, 1.0);
    run("discriminate", path_tol,
        [&](Graph& g) { return ad::sum(ad::mul(net::discriminate(g, m.Disc_C, small, g.constant(x)), g.constant(w_p))); },
        path_opts);
  }
  {
    net::NetConfig mid = small;
    mid.image_size = 16;
    mid.encoder_blocks = 2;
    mid.total_blocks = 3;
    net::ModuleSet m = net::build_models(mid, seed + 3);
    const Tensor x = random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
    Rng wr(seed + 4);
    const Tensor w_img = random_tensor({2, 3, 16, 16}, wr, -1.0, 1.0);
    run("encode_decode_image", path_tol,
        [&](Graph& g) {
          const net::EncodeOutput f = net::encode(g, m.E_H, mid, g.constant(x), net::Mode::train);
          return ad::sum(ad::mul(net::decode_image(g, m.D_C, mid, f, net::Mode::train), g.constant(w_img)));
        },
        path_opts);
  }
  return out;
}

}  // namespace rvsl::exp
