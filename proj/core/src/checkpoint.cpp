#include "rvsl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "rvsl/errors.hpp"

namespace rvsl::net {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'R', 'V', 'S', 'L'};
constexpr const char* kMetaName = "meta.net_config";

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

void put_record(std::string& out, const std::string& name, const Tensor& t) {
  if (name.size() > 0xFFFF) throw FormatError("parameter name too long: " + name);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
  out += name;
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) put<double>(out, v);
}

Tensor config_tensor(const NetConfig& c) {
  return Tensor({7}, {static_cast<double>(c.image_size), static_cast<double>(c.base_channels),
                      static_cast<double>(c.encoder_blocks), static_cast<double>(c.total_blocks),
                      static_cast<double>(c.embedding_dim), static_cast<double>(c.num_classes),
                      static_cast<double>(c.discriminator_channels)});
}

NetConfig config_from(const Tensor& t) {
  if (t.shape() != Shape{7}) throw FormatError("meta.net_config must hold 7 values");
  auto u = [&](std::size_t i) { return static_cast<std::size_t>(t[i]); };
  NetConfig c;
  c.image_size = u(0);
  c.base_channels = u(1);
  c.encoder_blocks = u(2);
  c.total_blocks = u(3);
  c.embedding_dim = u(4);
  c.num_classes = u(5);
  c.discriminator_channels = u(6);
  return c;
}

}  // namespace

std::string serialize(const ModuleSet& models) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  std::uint32_t count = 1;
  for (const Block* b : models.blocks()) count += static_cast<std::uint32_t>(b->params().size());
  put<std::uint32_t>(out, count);
  put_record(out, kMetaName, config_tensor(models.config));
  for (const Block* b : models.blocks()) {
    for (const ad::Parameter& p : b->params()) put_record(out, p.name, p.value);
  }
  return out;
}

ModuleSet deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError("not an RVSL checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();

  std::optional<ModuleSet> models;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.get<std::uint16_t>());
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = r.get<double>();
    Tensor value = rank == 0 ? Tensor::scalar(data.at(0)) : Tensor(shape, std::move(data));

    if (name == kMetaName) {
      if (models) throw FormatError("duplicate meta record");
      try {
        models = build_models(config_from(value), 0);
      } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("invalid network config in checkpoint: ") + e.what());
      }
      continue;
    }
    if (!models) throw FormatError("checkpoint must start with " + std::string(kMetaName));
    if (!seen.insert(name).second) throw FormatError("duplicate parameter " + name);
    ad::Parameter* p = nullptr;
    try {
      p = &models->find(name);
    } catch (const std::out_of_range&) {
      throw FormatError("unexpected parameter " + name);
    }
    if (p->value.shape() != value.shape()) {
      throw FormatError(name + ": shape " + shape_str(value.shape()) + " vs expected " + shape_str(p->value.shape()));
    }
    p->value = std::move(value);
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint records");
  if (!models) throw FormatError("checkpoint has no records");
  for (const Block* b : models->blocks()) {
    for (const ad::Parameter& p : b->params()) {
      if (!seen.contains(p.name)) throw FormatError("missing parameter " + p.name);
    }
  }
  return std::move(*models);
}

void save_checkpoint(const std::filesystem::path& path, const ModuleSet& models) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::string bytes = serialize(models);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ModuleSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace rvsl::net
