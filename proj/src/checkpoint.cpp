#include "nep/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "nep/error.hpp"

namespace nep {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'N', 'E', 'P', 'F'};

template <class U>
void put(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(std::uint8_t(std::uint64_t(v) >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  bool done() const { return pos_ == b_.size(); }
  void need(std::size_t n, const char* what) const {
    require(b_.size() - pos_ >= n, ErrorKind::Corruption, std::string("checkpoint truncated in ") + what);
  }
  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return U(v);
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(float* dst, std::size_t n) {
    require(n <= (b_.size() - pos_) / 4, ErrorKind::Corruption, "checkpoint truncated in tensor data");
    for (std::size_t i = 0; i < n; ++i) dst[i] = std::bit_cast<float>(get<std::uint32_t>("tensor data"));
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_tensor_file(const TensorFile& file) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string header = file.header.dump();
  put<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  auto sorted = file.tensors;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [name, t] : sorted) {
    require(name.size() < 65536, ErrorKind::Config, "tensor name too long");
    require(t.rank() < 256, ErrorKind::Config, "tensor rank too large");
    put<std::uint16_t>(out, name.size());
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, t.rank());
    for (auto d : t.dims) put<std::uint32_t>(out, d);
    for (float f : t.data) put_f32(out, f);
  }
  return out;
}

TensorFile parse_tensor_file(const std::vector<std::uint8_t>& bytes) {
  Reader rd(bytes);
  require(rd.bytes(4, "magic") == std::string(kMagic, 4), ErrorKind::Corruption, "checkpoint: bad magic");
  const auto version = rd.get<std::uint32_t>("version");
  require(version == kCheckpointVersion, ErrorKind::Corruption,
          "checkpoint: unsupported version " + std::to_string(version));
  const auto hlen = rd.get<std::uint64_t>("header length");
  TensorFile file;
  try {
    file.header = json::parse(rd.bytes(hlen, "header"));
  } catch (const json::exception& e) {
    fail(ErrorKind::Corruption, std::string("checkpoint: bad header JSON: ") + e.what());
  }
  std::string prev;
  while (!rd.done()) {
    const auto nlen = rd.get<std::uint16_t>("tensor name length");
    std::string name = rd.bytes(nlen, "tensor name");
    require(file.tensors.empty() || name > prev, ErrorKind::Corruption, "checkpoint: tensors not sorted");
    const auto rank = rd.get<std::uint8_t>("tensor rank");
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = rd.get<std::uint32_t>("tensor dims");
    std::size_t count = 1;
    for (auto d : dims) {
      require(d == 0 || count <= bytes.size() / d, ErrorKind::Corruption, "checkpoint: tensor too large");
      count *= d;
    }
    Tensor t;
    t.dims = dims;
    t.data.resize(count);
    rd.floats(t.data.data(), count);
    prev = name;
    file.tensors.emplace_back(std::move(name), std::move(t));
  }
  return file;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  const auto bytes = serialize_tensor_file(file);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    require(bool(out), ErrorKind::Input, "cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    require(bool(out), ErrorKind::Input, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorKind::Input, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_tensor_file(bytes);
}

std::string config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json tokenizer_to_json(const TokenizerConfig& cfg) {
  json pal = json::array();
  for (const auto& c : cfg.palette) pal.push_back({c.r, c.g, c.b});
  return json{{"image_h", cfg.image_h}, {"image_w", cfg.image_w}, {"patch", cfg.patch}, {"palette", pal}};
}

TokenizerConfig tokenizer_from_json(const json& j) {
  TokenizerConfig cfg;
  cfg.image_h = j.at("image_h");
  cfg.image_w = j.at("image_w");
  cfg.patch = j.at("patch");
  cfg.palette.clear();
  for (const auto& c : j.at("palette"))
    cfg.palette.push_back({std::uint8_t(c.at(0)), std::uint8_t(c.at(1)), std::uint8_t(c.at(2))});
  cfg.validate();
  return cfg;
}

json Checkpoint::header() const {
  return json{{"kind", "model"},
              {"model", params.cfg.to_json()},
              {"tokenizer", tokenizer_to_json(tokenizer)},
              {"training", training}};
}

std::string Checkpoint::hash() const {
  return config_hash(json{{"model", params.cfg.to_json()}, {"tokenizer", tokenizer_to_json(tokenizer)}});
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  TensorFile file;
  file.header = ckpt.header();
  ckpt.params.visit([&](const std::string& n, const Tensor& t) { file.tensors.emplace_back(n, t); });
  write_tensor_file(path, file);
}

Checkpoint checkpoint_from_file(const TensorFile& file) {
  Checkpoint ck;
  try {
    require(file.header.value("kind", "") == "model", ErrorKind::Corruption, "checkpoint: not a model file");
    ck.params.cfg = ModelConfig::from_json(file.header.at("model"));
    ck.tokenizer = tokenizer_from_json(file.header.at("tokenizer"));
    ck.training = file.header.value("training", json::object());
  } catch (const json::exception& e) {
    fail(ErrorKind::Corruption, std::string("checkpoint: bad header: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::Corruption, std::string("checkpoint: bad header: ") + e.what());
  }
  Rng rng(0);
  ck.params = ModelParams::init(ck.params.cfg, rng);
  const auto expected = count_params(ck.params.cfg);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [n, t] : file.tensors) by_name[n] = &t;
  require(by_name.size() == expected.tensors.size(), ErrorKind::Corruption,
          "checkpoint: expected " + std::to_string(expected.tensors.size()) + " tensors, found " +
              std::to_string(by_name.size()));
  ck.params.visit([&](const std::string& n, Tensor& t) {
    auto it = by_name.find(n);
    require(it != by_name.end(), ErrorKind::Corruption, "checkpoint: missing tensor " + n);
    require(it->second->dims == t.dims, ErrorKind::Corruption,
            "checkpoint: tensor " + n + " has shape " + shape_string(it->second->dims) + ", expected " +
                shape_string(t.dims));
    t.data = it->second->data;
  });
  const auto got = count_params(ck.params);
  require(got.total == expected.total, ErrorKind::Corruption, "checkpoint: parameter count mismatch");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_file(read_tensor_file(path));
}

}  // namespace nep
