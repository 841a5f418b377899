#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "fixtures.hpp"
#include "rvsl/config.hpp"
#include "rvsl/image_io.hpp"

using namespace rvsl;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr together
};

Result rvsl_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + RVSL_CLI_PATH + "\" " + args + " 2>&1";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// One tiny corpus and run shared by the cases below.
struct Workspace {
  fixture::TempDir dir{"rvsl_cli"};
  fs::path config = dir.path / "tiny.json";
  fs::path data = dir.path / "data";
  fs::path run = dir.path / "run";
  Workspace() {
    std::ofstream(config) << dump_config(fixture::tiny_run());
    const Result s = rvsl_cli("synth --config " + q(config) + " --out " + q(data));
    REQUIRE_MESSAGE(s.code == 0, s.output);
    const Result t = rvsl_cli("train --config " + q(config) + " --data " + q(data) + " --out " + q(run));
    REQUIRE_MESSAGE(t.code == 0, t.output);
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("usage errors exit 2 with a structured line") {
  const Result none = rvsl_cli("");
  CHECK(none.code == 2);
  const Result bad = rvsl_cli("frobnicate");
  CHECK(bad.code == 2);
  CHECK(bad.output.find("rvsl: error code=2 kind=usage msg=\"") != std::string::npos);
  CHECK(rvsl_cli("render --image x.png").code == 2);
  CHECK(rvsl_cli("--help").code == 0);
}

TEST_CASE("config errors exit 2 and name the key") {
  fixture::TempDir dir("rvsl_cli_cfg");
  std::ofstream(dir.path / "bad.json") << R"({"train":{"margin":-1}})";
  const Result r = rvsl_cli("synth --config " + q(dir.path / "bad.json") + " --out " + q(dir.path / "d"));
  CHECK(r.code == 2);
  CHECK(r.output.find("rvsl: error code=2 kind=config key=train.margin msg=\"") != std::string::npos);
}

TEST_CASE("synth writes a corpus with manifest and resolved config") {
  Workspace& w = ws();
  CHECK(fs::exists(w.data / "manifest.jsonl"));
  CHECK(fs::exists(w.data / "config.resolved.json"));
  std::ifstream in(w.data / "manifest.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(fs::exists(w.data / j["path"].get<std::string>()));
    ++n;
  }
  CHECK(n == 8 * 4 * 2 + 3 * 4 * 2 + 3 * 4);
}

TEST_CASE("train writes a checkpoint and a json step log") {
  Workspace& w = ws();
  CHECK(fs::file_size(w.run / "model.ckpt") > 12);
  std::ifstream log(w.run / "train_log.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("losses"));
    ++n;
  }
  CHECK(n == 2 * 3);

  // Same config and seed, same bytes.
  const fs::path again = w.dir.path / "run2";
  REQUIRE(rvsl_cli("train --config " + q(w.config) + " --data " + q(w.data) + " --out " + q(again)).code == 0);
  std::ifstream a(w.run / "model.ckpt", std::ios::binary), b(again / "model.ckpt", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
}

TEST_CASE("eval writes a report") {
  Workspace& w = ws();
  const fs::path report = w.dir.path / "report.json";
  const Result r = rvsl_cli("eval --ckpt " + q(w.run / "model.ckpt") + " --data " + q(w.data) + " --report " + q(report));
  REQUIRE_MESSAGE(r.code == 0, r.output);
  std::ifstream in(report);
  const auto j = nlohmann::json::parse(in);
  CHECK(j["mAP"].get<double>() > 0.0);
  CHECK(j["mAP"].get<double>() <= 1.0);
  CHECK(j["cmc"].contains("1"));
  CHECK(j["excluded_probes"].get<int>() == 0);

  const Result syn = rvsl_cli("eval --ckpt " + q(w.run / "model.ckpt") + " --data " + q(w.data) + " --report " +
                              q(report) + " --domain syn");
  CHECK(syn.code == 1);  // the tiny corpus has no synthetic eval identities
  CHECK(rvsl_cli("eval --ckpt " + q(w.run / "model.ckpt") + " --data " + q(w.data) + " --report " + q(report) +
                 " --domain moon")
            .code == 2);
}

TEST_CASE("runtime errors exit 1") {
  Workspace& w = ws();
  const fs::path junk = w.dir.path / "junk.ckpt";
  std::ofstream(junk) << "not a checkpoint";
  const Result r = rvsl_cli("eval --ckpt " + q(junk) + " --data " + q(w.data) + " --report " + q(w.dir.path / "r.json"));
  CHECK(r.code == 1);
  CHECK(r.output.find("rvsl: error code=1 kind=runtime msg=\"") != std::string::npos);
  CHECK(rvsl_cli("train --data " + q(w.dir.path / "nowhere") + " --out " + q(w.dir.path / "x")).code != 0);
}

TEST_CASE("protocol violations exit 2") {
  Workspace& w = ws();
  const fs::path broken = w.dir.path / "broken";
  fs::copy(w.data, broken, fs::copy_options::recursive);
  // Turn the first gallery record into a second probe of its identity.
  std::ifstream in(broken / "manifest.jsonl");
  std::string line, text;
  bool done = false;
  while (std::getline(in, line)) {
    if (!done && line.find("\"split\":\"gallery\"") != std::string::npos) {
      line.replace(line.find("\"split\":\"gallery\""), 17, "\"split\":\"probe\"");
      done = true;
    }
    text += line + "\n";
  }
  in.close();
  REQUIRE(done);
  std::ofstream(broken / "manifest.jsonl") << text;
  const Result r = rvsl_cli("eval --ckpt " + q(w.run / "model.ckpt") + " --data " + q(broken) + " --report " +
                            q(w.dir.path / "r.json"));
  CHECK(r.code == 2);
  CHECK(r.output.find("kind=protocol") != std::string::npos);
}

TEST_CASE("render with zero scattering returns the input") {
  Workspace& w = ws();
  const Tensor img = fixture::uniform({3, 16, 16}, 40);
  const Tensor depth = fixture::uniform({16, 16}, 41);
  io::write_png_rgb(w.dir.path / "in.png", img);
  io::write_png_gray16(w.dir.path / "d.png", depth);
  const std::string base = "render --image " + q(w.dir.path / "in.png") + " --depth " + q(w.dir.path / "d.png");
  REQUIRE(rvsl_cli(base + " --beta 0 --out " + q(w.dir.path / "same.png")).code == 0);
  CHECK(io::read_png_rgb(w.dir.path / "same.png") == io::read_png_rgb(w.dir.path / "in.png"));

  REQUIRE(rvsl_cli(base + " --beta 3 --airlight 1 --out " + q(w.dir.path / "hazy.png")).code == 0);
  const Tensor hazy = io::read_png_rgb(w.dir.path / "hazy.png"), in = io::read_png_rgb(w.dir.path / "in.png");
  for (std::size_t i = 0; i < in.size(); ++i) CHECK(hazy[i] >= in[i]);

  CHECK(rvsl_cli(base + " --beta 1 --airlight 1,2 --out " + q(w.dir.path / "x.png")).code == 2);
  CHECK(rvsl_cli(base + " --beta -1 --out " + q(w.dir.path / "x.png")).code == 2);
}

TEST_CASE("dehaze produces an image of the model size") {
  Workspace& w = ws();
  io::write_png_rgb(w.dir.path / "h.png", fixture::uniform({3, 16, 16}, 42));
  REQUIRE(rvsl_cli("dehaze --ckpt " + q(w.run / "model.ckpt") + " --image " + q(w.dir.path / "h.png") + " --out " +
                   q(w.dir.path / "c.png"))
              .code == 0);
  CHECK(io::read_png_rgb(w.dir.path / "c.png").shape() == Shape{3, 16, 16});
  io::write_png_rgb(w.dir.path / "big.png", fixture::uniform({3, 32, 32}, 43));
  CHECK(rvsl_cli("dehaze --ckpt " + q(w.run / "model.ckpt") + " --image " + q(w.dir.path / "big.png") + " --out " +
                 q(w.dir.path / "c2.png"))
            .code == 2);
}

TEST_CASE("gradcheck passes") {
  const Result r = rvsl_cli("gradcheck");
  CHECK_MESSAGE(r.code == 0, r.output);
  CHECK(r.output.find("FAIL") == std::string::npos);
  CHECK(r.output.find("PASS") != std::string::npos);
}
