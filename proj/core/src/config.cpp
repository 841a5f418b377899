#include "rvsl/config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rvsl/errors.hpp"

namespace rvsl {
namespace {

using json = nlohmann::json;

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Reads fields from a JSON object, remembering which keys were consumed so
// leftovers can be reported as unknown.
class JsonReader {
 public:
  explicit JsonReader(const json& root) { stack_.push_back({&root, "", {}}); }

  template <typename T>
  void field(const std::string& key, T& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    out = convert<T>(*v, join(top().path, key));
  }

  template <typename T>
  void field(const std::string& key, std::optional<T>& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    if (v->is_null()) {
      out.reset();
    } else {
      out = convert<T>(*v, join(top().path, key));
    }
  }

  void field(const std::string& key, std::vector<std::size_t>& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    const std::string path = join(top().path, key);
    if (!v->is_array()) throw ConfigError(path, "expected an array of integers");
    out.clear();
    for (const json& e : *v) out.push_back(convert<std::size_t>(e, path));
  }

  void section(const std::string& key, const std::function<void()>& body) {
    const json* v = find(key);
    if (v == nullptr) return;
    const std::string path = join(top().path, key);
    if (!v->is_object()) throw ConfigError(path, "expected an object");
    stack_.push_back({v, path, {}});
    body();
    finish();
    stack_.pop_back();
  }

  void finish() {
    const Frame& f = top();
    for (const auto& [k, _] : f.obj->items()) {
      if (!f.seen.contains(k)) throw ConfigError(join(f.path, k), "unknown key");
    }
  }

  bool present(const std::string& dotted) const { return given_.contains(dotted); }

 private:
  struct Frame {
    const json* obj;
    std::string path;
    std::set<std::string> seen;
  };
  Frame& top() { return stack_.back(); }
  const Frame& top() const { return stack_.back(); }

  const json* find(const std::string& key) {
    Frame& f = top();
    f.seen.insert(key);
    auto it = f.obj->find(key);
    if (it == f.obj->end()) return nullptr;
    given_.insert(join(f.path, key));
    return &*it;
  }

  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
      if (v.is_number_unsigned()) {
        const auto u = v.get<std::uint64_t>();
        if (u > static_cast<std::uint64_t>(std::numeric_limits<T>::max())) throw ConfigError(path, "integer out of range");
        return static_cast<T>(u);
      }
      const auto s = v.get<std::int64_t>();
      if (s < 0) throw ConfigError(path, "expected a non-negative integer");
      return static_cast<T>(s);
    } else {
      if (!v.is_number()) throw ConfigError(path, "expected a number");
      return v.get<T>();
    }
  }

  std::vector<Frame> stack_;
  std::set<std::string> given_;
};

class JsonWriter {
 public:
  JsonWriter() { stack_.push_back(json::object()); }

  template <typename T>
  void field(const std::string& key, const T& v) {
    stack_.back()[key] = v;
  }
  template <typename T>
  void field(const std::string& key, const std::optional<T>& v) {
    stack_.back()[key] = v ? json(*v) : json(nullptr);
  }
  void section(const std::string& key, const std::function<void()>& body) {
    stack_.push_back(json::object());
    body();
    json done = std::move(stack_.back());
    stack_.pop_back();
    stack_.back()[key] = std::move(done);
  }
  json result() const { return stack_.front(); }

 private:
  std::vector<json> stack_;
};

template <typename V, typename C>
void visit_haze(V& v, C& h) {
  v.field("beta_lo", h.beta_lo);
  v.field("beta_hi", h.beta_hi);
  v.field("airlight_lo", h.airlight_lo);
  v.field("airlight_hi", h.airlight_hi);
  v.field("chroma_jitter", h.chroma_jitter);
  v.field("airlight_gradient", h.airlight_gradient);
  v.field("noise_sigma", h.noise_sigma);
  v.field("gamma_jitter", h.gamma_jitter);
}

// Single description of the schema, shared by the reader and the writer.
template <typename V, typename C>
void visit(V& v, C& c) {
  v.section("data", [&] {
    v.field("seed", c.data_seed);
    v.field("image_size", c.data.image_size);
    v.field("syn_identities", c.data.syn_identities);
    v.field("syn_views", c.data.syn_views);
    v.field("syn_eval_identities", c.data.syn_eval_identities);
    v.field("real_identities", c.data.real_identities);
    v.field("real_views", c.data.real_views);
    v.field("real_eval_identities", c.data.real_eval_identities);
    v.field("real_id_offset", c.data.real_id_offset);
    v.section("syn_haze", [&] { visit_haze(v, c.data.syn_haze); });
    v.section("real_haze", [&] { visit_haze(v, c.data.real_haze); });
  });
  v.section("net", [&] {
    v.field("image_size", c.net.image_size);
    v.field("base_channels", c.net.base_channels);
    v.field("encoder_blocks", c.net.encoder_blocks);
    v.field("total_blocks", c.net.total_blocks);
    v.field("embedding_dim", c.net.embedding_dim);
    v.field("discriminator_channels", c.net.discriminator_channels);
  });
  v.section("train", [&] {
    auto& t = c.train;
    v.field("epochs", t.epochs);
    v.field("p", t.p);
    v.field("k", t.k);
    v.field("unsup_batch", t.unsup_batch);
    v.field("iterations_per_epoch", t.iterations_per_epoch);
    v.field("lr_init", t.lr_init);
    v.field("lr_peak", t.lr_peak);
    v.field("warmup_epochs", t.warmup_epochs);
    v.field("decay", t.decay);
    v.field("decay_interval", t.decay_interval);
    v.field("disc_lr_scale", t.disc_lr_scale);
    v.field("seed", t.seed);
    v.field("margin", t.triplet.margin);
    v.field("dark_channel_patch", t.dark_channel.patch);
    v.field("f_variant", t.f_variant);
    v.section("adam", [&] {
      v.field("beta1", t.adam.beta1);
      v.field("beta2", t.adam.beta2);
      v.field("epsilon", t.adam.epsilon);
    });
    v.section("augment", [&] {
      v.field("enabled", t.augment.enabled);
      v.field("crop_pad", t.augment.crop_pad);
      v.field("flip_prob", t.augment.flip_prob);
    });
    v.section("stages", [&] {
      v.field("supervised", t.stages.supervised);
      v.field("unsup_clear", t.stages.unsup_clear);
      v.field("unsup_hazy", t.stages.unsup_hazy);
    });
    v.section("weights", [&] {
      auto& w = t.weights;
      v.field("dts", w.dts);
      v.field("rc", w.rc);
      v.field("midc", w.midc);
      v.field("cr", w.cr);
      v.field("dis", w.dis);
      v.field("dc", w.dc);
      v.field("tv", w.tv);
      v.field("tri", w.tri);
      v.field("id", w.id);
      v.field("ec", w.ec);
    });
  });
  v.section("eval", [&] {
    v.field("ranks", c.eval.ranks);
    v.field("include_ranking", c.eval.include_ranking);
  });
}

void check(bool ok, const std::string& key, const std::string& reason) {
  if (!ok) throw ConfigError(key, reason);
}

// Runs a module's own validation, attributing failures to a section.
void section_valid(const std::string& section, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section, e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  const auto& t = train;
  check(t.triplet.margin > 0.0, "train.margin", "must be > 0");
  check(t.p >= 2, "train.p", "must be >= 2");
  check(t.k >= 2, "train.k", "must be >= 2");
  check(t.epochs >= 1, "train.epochs", "must be >= 1");
  check(t.lr_init > 0.0, "train.lr_init", "must be > 0");
  check(t.lr_peak > 0.0, "train.lr_peak", "must be > 0");
  check(t.decay > 0.0 && t.decay <= 1.0, "train.decay", "must lie in (0, 1]");
  check(t.decay_interval >= 1, "train.decay_interval", "must be >= 1");
  check(t.dark_channel.patch % 2 == 1, "train.dark_channel_patch", "must be odd");
  check(t.augment.flip_prob >= 0.0 && t.augment.flip_prob <= 1.0, "train.augment.flip_prob", "must lie in [0, 1]");
  for (const char* k : {"dts", "rc", "midc", "cr", "dis", "dc", "tv", "tri", "id", "ec"}) {
    check(t.weights.of(k) >= 0.0, std::string("train.weights.") + k, "must be >= 0");
  }
  check(net.encoder_blocks >= 1 && net.encoder_blocks <= 4, "net.encoder_blocks", "must lie in 1..4");
  check(net.embedding_dim >= 8, "net.embedding_dim", "must be >= 8");
  check(net.image_size == data.image_size, "net.image_size", "must equal data.image_size");
  check(!eval.ranks.empty(), "eval.ranks", "must not be empty");
  for (std::size_t r : eval.ranks) check(r >= 1, "eval.ranks", "ranks start at 1");
  section_valid("data", [&] { data.validate(); });
  section_valid("net", [&] { net.validate(); });
  section_valid("train", [&] { train.validate(); });
}

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<document>", std::string("invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("<document>", "expected a JSON object");
  RunConfig cfg;
  JsonReader r(root);
  visit(r, cfg);
  r.finish();
  if (!r.present("net.image_size")) cfg.net.image_size = cfg.data.image_size;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const RunConfig& cfg) {
  JsonWriter w;
  RunConfig copy = cfg;
  visit(w, copy);
  return w.result().dump(2);
}

}  // namespace rvsl
