// rvsl: dataset synthesis, training, evaluation and diagnostics.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "rvsl/checkpoint.hpp"
#include "rvsl/config.hpp"
#include "rvsl/errors.hpp"
#include "rvsl/experiments.hpp"
#include "rvsl/haze.hpp"
#include "rvsl/image_io.hpp"
#include "rvsl/parallel.hpp"
#include "rvsl/retrieval.hpp"
#include "rvsl/trainer.hpp"

namespace fs = std::filesystem;
using namespace rvsl;

namespace {

// Usage-class failure detected after CLI parsing (bad flag values).
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

int cmd_synth(const std::string& config, const fs::path& out) {
  const RunConfig cfg = config_or_default(config);
  const data::Dataset ds = data::generate_dataset(cfg.data, cfg.data_seed);
  data::write_dataset(out, ds);
  write_text(out / "config.resolved.json", dump_config(cfg) + "\n");
  std::cout << "wrote " << ds.samples.size() << " images to " << out.string() << "\n";
  return 0;
}

int cmd_train(const std::string& config, const fs::path& data_dir, const fs::path& out) {
  const RunConfig cfg = config_or_default(config);
  const data::Dataset ds = data::load_dataset(data_dir);
  if (!ds.samples.empty() && ds.samples.front().image.dim(1) != cfg.net.image_size) {
    throw ConfigError("net.image_size", "dataset images are " + std::to_string(ds.samples.front().image.dim(1)) + " px");
  }
  fs::create_directories(out);
  write_text(out / "config.resolved.json", dump_config(cfg) + "\n");
  net::ModuleSet models = exp::build_for(cfg, ds);
  train::Trainer trainer(models, ds, cfg.train);
  std::ofstream log(out / "train_log.jsonl", std::ios::binary);
  const auto steps = trainer.fit(&log);
  net::save_checkpoint(out / "model.ckpt", models);
  std::cout << "trained " << steps.size() << " steps; checkpoint " << (out / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data_dir, const fs::path& report, const std::string& config,
             const std::string& domain) {
  const RunConfig cfg = config_or_default(config);
  net::ModuleSet models = net::load_checkpoint(ckpt);
  const data::Dataset ds = data::load_dataset(data_dir);
  eval::check_protocol(ds.manifest);
  if (domain != "real" && domain != "syn") throw UsageError("--domain must be real or syn");
  const eval::EvalReport rep = eval::evaluate_domain(models, ds, domain == "real", cfg.eval.ranks);
  write_text(report, eval::to_json(rep, cfg.eval.include_ranking) + "\n");
  std::printf("mAP %.4f  CMC@1 %.4f\n", rep.mAP, rep.cmc_at(1));
  return 0;
}

haze::Rgb parse_airlight(const std::string& s) {
  haze::Rgb a{};
  std::stringstream ss(s);
  std::string part;
  std::size_t n = 0;
  while (std::getline(ss, part, ',')) {
    if (n >= 3) throw UsageError("--airlight takes one value or r,g,b");
    try {
      a[n++] = std::stod(part);
    } catch (const std::exception&) {
      throw UsageError("--airlight: not a number: " + part);
    }
  }
  if (n == 1) a = {a[0], a[0], a[0]};
  else if (n != 3) throw UsageError("--airlight takes one value or r,g,b");
  return a;
}

int cmd_render(const fs::path& image, const fs::path& depth, double beta, const std::string& airlight,
               const fs::path& out) {
  const Tensor clear = io::read_png_rgb(image);
  const Tensor d = io::read_png_gray16(depth);
  const haze::Rgb a = parse_airlight(airlight);
  for (double c : a) {
    if (!(c >= 0.0 && c <= 1.0)) throw UsageError("--airlight channels must lie in [0, 1]");
  }
  if (beta < 0.0) throw UsageError("--beta must be >= 0");
  // beta = 0 is clear air: t = 1 everywhere and the image passes unchanged.
  const Tensor t = beta == 0.0 ? Tensor(d.shape(), 1.0) : haze::transmission_from_depth(d, beta);
  io::write_png_rgb(out, haze::synthesize_haze(clear, t, haze::HazeParams{beta, a}));
  return 0;
}

int cmd_dehaze(const fs::path& ckpt, const fs::path& image, const fs::path& out) {
  net::ModuleSet models = net::load_checkpoint(ckpt);
  const Tensor img = io::read_png_rgb(image);
  const std::size_t S = models.config.image_size;
  if (img.shape() != Shape{3, S, S}) {
    throw UsageError("image is " + shape_str(img.shape()) + " but the checkpoint expects 3x" + std::to_string(S) + "x" +
                     std::to_string(S));
  }
  ad::Graph g;
  const Tensor batch = img.reshaped({1, 3, S, S});
  const auto f = net::encode(g, models.E_H, models.config, g.input(batch, false, "hazy"), net::Mode::eval, false);
  const Tensor clear = net::decode_image(g, models.D_C, models.config, f, net::Mode::eval, false).value();
  io::write_png_rgb(out, unstack(clear, 0));
  return 0;
}

int cmd_gradcheck() {
  bool ok = true;
  for (const exp::GradCase& c : exp::run_gradient_suite()) {
    const bool pass = c.report.passed;
    ok = ok && pass;
    std::printf("%-24s %s max_rel_err=%.3e tol=%.0e probes=%zu skipped=%zu%s%s\n", c.name.c_str(),
                pass ? "PASS" : "FAIL", c.report.max_rel_error, c.tolerance, c.report.probes, c.report.skipped_kinks,
                c.report.failure.empty() ? "" : " failure=", c.report.failure.c_str());
  }
  return ok ? 0 : 1;
}

int cmd_ablate(const std::string& config, const fs::path& out, std::size_t seeds, const std::string& matrices) {
  const RunConfig cfg = config_or_default(config);
  fs::create_directories(out);
  write_text(out / "config.resolved.json", dump_config(cfg) + "\n");
  std::vector<std::uint64_t> seed_list;
  for (std::size_t s = 0; s < seeds; ++s) seed_list.push_back(cfg.data_seed + s);

  std::string report;
  auto run = [&](const std::string& title, const std::vector<exp::Variant>& variants) {
    const auto rows = exp::run_ablation(cfg, variants, seed_list, [](const std::string& v, std::uint64_t seed, const exp::RunOutcome& r) {
      std::printf("%-16s seed=%llu mAP=%.4f (%.0fs)\n", v.c_str(), static_cast<unsigned long long>(seed), r.real.mAP,
                  r.seconds);
      std::fflush(stdout);
    });
    report += "## " + title + "\n\n" + exp::format_table(rows) + "\n";
  };
  std::stringstream ss(matrices);
  std::string m;
  while (std::getline(ss, m, ',')) {
    if (m == "stages") run("Training data stages", exp::stage_variants());
    else if (m == "losses") run("Loss ablation", exp::loss_variants());
    else if (m == "depth") run("Encoder depth", exp::depth_variants(cfg));
    else if (m == "f") run("Identity supervision on real data", exp::f_variants());
    else throw UsageError("unknown matrix '" + m + "' (stages, losses, depth, f)");
  }
  write_text(out / "ablation.md", report);
  std::cout << report;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised vehicle re-identification under haze (toy scale)"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "worker threads (0 = RVSL_THREADS or hardware)");

  std::string config, out, data_dir, ckpt, report, image, depth, airlight = "1", domain = "real";
  std::string matrices = "stages,losses";
  double beta = 1.0;
  std::size_t seeds = 3;

  auto* synth = app.add_subcommand("synth", "generate a toy dataset and manifest");
  synth->add_option("--config", config, "run config JSON");
  synth->add_option("--out", out, "output directory")->required();

  auto* trn = app.add_subcommand("train", "train from scratch; writes model.ckpt and train_log.jsonl");
  trn->add_option("--config", config, "run config JSON");
  trn->add_option("--data", data_dir, "dataset directory")->required();
  trn->add_option("--out", out, "run directory")->required();

  auto* ev = app.add_subcommand("eval", "retrieval evaluation; writes a JSON report");
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--report", report, "report path")->required();
  ev->add_option("--config", config, "run config JSON (eval section)");
  ev->add_option("--domain", domain, "real or syn");

  auto* ren = app.add_subcommand("render", "apply the haze model to an image");
  ren->add_option("--image", image, "clear RGB PNG")->required();
  ren->add_option("--depth", depth, "16-bit depth PNG, values in [0,1]")->required();
  ren->add_option("--beta", beta, "scattering coefficient (0 = no haze)")->required();
  ren->add_option("--airlight", airlight, "airlight: v or r,g,b in [0,1]");
  ren->add_option("--out", out, "output PNG")->required();

  auto* deh = app.add_subcommand("dehaze", "hazy image through E_H and D_C");
  deh->add_option("--ckpt", ckpt, "checkpoint")->required();
  deh->add_option("--image", image, "hazy RGB PNG")->required();
  deh->add_option("--out", out, "output PNG")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of every loss and network path");

  auto* abl = app.add_subcommand("ablate", "stage / loss / depth / identity-supervision ablations");
  abl->add_option("--config", config, "run config JSON");
  abl->add_option("--out", out, "output directory")->required();
  abl->add_option("--seeds", seeds, "seeds per variant");
  abl->add_option("--matrix", matrices, "comma list of: stages, losses, depth, f");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "rvsl: error code=2 kind=usage msg=" << quote(e.what()) << "\n";
    return 2;
  }

  try {
    if (threads > 0) set_worker_count(threads);
    retain_freed_memory();
    if (*synth) return cmd_synth(config, out);
    if (*trn) return cmd_train(config, data_dir, out);
    if (*ev) return cmd_eval(ckpt, data_dir, report, config, domain);
    if (*ren) return cmd_render(image, depth, beta, airlight, out);
    if (*deh) return cmd_dehaze(ckpt, image, out);
    if (*gc) return cmd_gradcheck();
    if (*abl) return cmd_ablate(config, out, seeds, matrices);
  } catch (const ConfigError& e) {
    std::cerr << "rvsl: error code=2 kind=config key=" << e.key() << " msg=" << quote(e.what()) << "\n";
    return 2;
  } catch (const ProtocolError& e) {
    std::cerr << "rvsl: error code=2 kind=protocol msg=" << quote(e.what()) << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "rvsl: error code=2 kind=usage msg=" << quote(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "rvsl: error code=1 kind=runtime msg=" << quote(e.what()) << "\n";
    return 1;
  }
  return 2;
}
