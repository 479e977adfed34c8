#include "miq3d/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "miq3d/errors.hpp"

namespace miq3d {
namespace {

constexpr char kMagic[8] = {'M', 'I', 'Q', '3', 'D', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename U>
  void put(U v) {
    char raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    buf_.append(raw, sizeof(U));
  }
  void put_bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void put_string32(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void put_floats(const std::vector<float>& v) { put_bytes(v.data(), v.size() * sizeof(float)); }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}
  template <typename U>
  U get() {
    U v;
    std::memcpy(&v, take(sizeof(U)), sizeof(U));
    return v;
  }
  const char* take(std::size_t n) {
    if (data_.size() - pos_ < n) throw FormatError("truncated checkpoint");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string get_string(std::size_t n) { return std::string(take(n), n); }
  std::vector<float> get_floats(std::size_t n) {
    if (n > (data_.size() - pos_) / sizeof(float)) throw FormatError("truncated checkpoint");
    std::vector<float> v(n);
    std::memcpy(v.data(), take(n * sizeof(float)), n * sizeof(float));
    return v;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint capture(const RunConfig& cfg, const Model<float>& model, const AdamState& optim,
                   std::uint64_t step) {
  Checkpoint c;
  c.config = cfg;
  c.step = step;
  for (const auto& p : model.store().params()) {
    const auto d = p.tensor.data();
    c.params.push_back({p.name, p.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  c.optimizer = optim;
  return c;
}

void restore(Model<float>& model, const Checkpoint& ckpt) {
  auto& params = model.store().params();
  if (params.size() != ckpt.params.size())
    throw CompatibilityError("checkpoint has " + std::to_string(ckpt.params.size()) +
                             " parameters, model expects " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& blob = ckpt.params[i];
    auto& p = params[i];
    if (blob.name != p.name || blob.shape != p.tensor.shape())
      throw CompatibilityError("checkpoint parameter " + blob.name + " " + shape_str(blob.shape) +
                               " does not match model parameter " + p.name + " " +
                               shape_str(p.tensor.shape()));
    const auto w = p.tensor.mutable_data();
    std::copy(blob.data.begin(), blob.data.end(), w.begin());
  }
}

std::unique_ptr<Model<float>> build_model(const Checkpoint& ckpt) {
  auto model = std::make_unique<Model<float>>(ckpt.config.model, init_seed(ckpt.config));
  restore(*model, ckpt);
  return model;
}

std::string serialize(const Checkpoint& c) {
  Writer w;
  w.put_bytes(kMagic, 8);
  w.put<std::uint32_t>(kVersion);
  const std::string ini = to_ini(c.config);
  w.put<std::uint64_t>(ini.size());
  w.put_bytes(ini.data(), ini.size());
  w.put<std::uint64_t>(c.step);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& p : c.params) {
    if (p.data.size() != numel(p.shape)) throw DimensionError("parameter blob " + p.name + " size mismatch");
    w.put_string32(p.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) w.put<std::uint64_t>(d);
    w.put_floats(p.data);
  }
  w.put<std::uint64_t>(c.optimizer.t);
  const bool has_moments = !c.optimizer.m.empty();
  w.put<std::uint8_t>(has_moments ? 1 : 0);
  if (has_moments) {
    if (c.optimizer.m.size() != c.params.size() || c.optimizer.v.size() != c.params.size())
      throw CompatibilityError("optimizer state does not match parameter count");
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      if (c.optimizer.m[i].size() != c.params[i].data.size() ||
          c.optimizer.v[i].size() != c.params[i].data.size())
        throw CompatibilityError("optimizer state size mismatch for " + c.params[i].name);
      w.put_floats(c.optimizer.m[i]);
      w.put_floats(c.optimizer.v[i]);
    }
  }
  return w.take();
}

Checkpoint deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(8), kMagic, 8) != 0) throw FormatError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  const auto ini_len = r.get<std::uint64_t>();
  if (ini_len > bytes.size()) throw FormatError("truncated checkpoint");
  c.config = parse_run_config(r.get_string(ini_len));
  c.step = r.get<std::uint64_t>();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    ParamBlob p;
    const auto name_len = r.get<std::uint32_t>();
    p.name = r.get_string(name_len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError("implausible rank for parameter " + p.name);
    for (std::uint32_t k = 0; k < rank; ++k) p.shape.push_back(r.get<std::uint64_t>());
    p.data = r.get_floats(numel(p.shape));
    c.params.push_back(std::move(p));
  }
  c.optimizer.t = r.get<std::uint64_t>();
  if (r.get<std::uint8_t>() != 0) {
    for (const auto& p : c.params) {
      c.optimizer.m.push_back(r.get_floats(p.data.size()));
      c.optimizer.v.push_back(r.get_floats(p.data.size()));
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint payload");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace miq3d
