#include "nep/dataset.hpp"

#include <fstream>

#include "nep/error.hpp"

namespace nep {

using nlohmann::json;

namespace {

constexpr std::uint64_t kT2IStream = 0x743269;
constexpr std::uint64_t kEditStream = 0x65646974;

std::string png_b64(const Image& img) { return base64_encode(encode_png(img)); }

Image b64_png(const json& j, std::size_t channels) {
  return decode_png(base64_decode(j.get<std::string>()), channels);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(bool(in), ErrorKind::Input, "cannot open shard " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  return lines;
}

// Missing keys, wrong types and bad JSON all surface as Corruption.
template <class F>
auto parse_record(const std::string& line, F&& convert) {
  try {
    return convert(json::parse(line));
  } catch (const json::exception& e) {
    fail(ErrorKind::Corruption, std::string("malformed shard record: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::Input) throw;
    fail(ErrorKind::Corruption, std::string("bad image in shard record: ") + e.what());
  }
}

}  // namespace

namespace {

T2IRecord t2i_record_at(std::uint64_t seed, std::size_t i, const TokenizerConfig& cfg) {
  Rng rng = Rng(seed, kT2IStream).fork(i);
  auto s = scene::random_scene(rng, int(cfg.rows()), int(cfg.cols()));
  return {scene::caption(s), scene::render(s, cfg), s};
}

EditRecord edit_record_at(std::uint64_t seed, std::size_t i, const TokenizerConfig& cfg) {
  Rng rng = Rng(seed, kEditStream).fork(i);
  auto t = scene::random_edit(rng, int(cfg.rows()), int(cfg.cols()));
  EditRecord r;
  r.instruction = t.instruction;
  r.source = scene::render(t.source, cfg);
  r.target = scene::render(t.target, cfg);
  r.mask = mask_image(mask_from_patches(t.patch_mask, cfg), cfg);
  r.op = t.op;
  r.source_scene = t.source;
  r.target_scene = t.target;
  return r;
}

}  // namespace

std::vector<T2IRecord> generate_t2i(std::size_t count, std::uint64_t seed, const TokenizerConfig& cfg) {
  std::vector<T2IRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(t2i_record_at(seed, i, cfg));
  return out;
}

std::vector<EditRecord> generate_edit(std::size_t count, std::uint64_t seed, const TokenizerConfig& cfg) {
  std::vector<EditRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(edit_record_at(seed, i, cfg));
  return out;
}

std::string to_jsonl(const T2IRecord& r) {
  return json{{"caption", r.caption}, {"image", png_b64(r.image)}, {"scene", scene::to_json(r.scene)}}.dump();
}

std::string to_jsonl(const EditRecord& r) {
  return json{{"instruction", r.instruction},
              {"source", png_b64(r.source)},
              {"target", png_b64(r.target)},
              {"mask", png_b64(r.mask)},
              {"op", scene::name(r.op)},
              {"scene", {{"source", scene::to_json(r.source_scene)}, {"target", scene::to_json(r.target_scene)}}}}
      .dump();
}

T2IRecord t2i_from_json(const json& j) {
  return {j.at("caption").get<std::string>(), b64_png(j.at("image"), 3), scene::scene_from_json(j.at("scene"))};
}

EditRecord edit_from_json(const json& j) {
  EditRecord r;
  r.instruction = j.at("instruction").get<std::string>();
  r.source = b64_png(j.at("source"), 3);
  r.target = b64_png(j.at("target"), 3);
  r.mask = b64_png(j.at("mask"), 1);
  const auto op = j.at("op").get<std::string>();
  bool found = false;
  for (int k = 0; k < scene::kEditOpCount; ++k)
    if (op == scene::name(scene::EditOp(k))) {
      r.op = scene::EditOp(k);
      found = true;
    }
  require(found, ErrorKind::Corruption, "unknown edit op '" + op + "'");
  r.source_scene = scene::scene_from_json(j.at("scene").at("source"));
  r.target_scene = scene::scene_from_json(j.at("scene").at("target"));
  return r;
}

std::size_t make_dataset(ShardKind kind, std::size_t count, std::uint64_t seed, const TokenizerConfig& cfg,
                         const std::filesystem::path& path) {
  require(count >= 1, ErrorKind::Config, "make_dataset: count must be >= 1");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(bool(out), ErrorKind::Input, "cannot write shard " + path.string());
  std::size_t bytes = 0;
  auto emit = [&](const std::string& line) {
    out << line << '\n';
    bytes += line.size() + 1;
  };
  // One record at a time keeps memory flat for large shards.
  for (std::size_t i = 0; i < count; ++i)
    emit(kind == ShardKind::T2I ? to_jsonl(t2i_record_at(seed, i, cfg)) : to_jsonl(edit_record_at(seed, i, cfg)));
  return bytes;
}

std::vector<T2IRecord> read_t2i_shard(const std::filesystem::path& path) {
  std::vector<T2IRecord> out;
  for (const auto& line : read_lines(path)) out.push_back(parse_record(line, t2i_from_json));
  return out;
}

std::vector<EditRecord> read_edit_shard(const std::filesystem::path& path) {
  std::vector<EditRecord> out;
  for (const auto& line : read_lines(path)) out.push_back(parse_record(line, edit_from_json));
  return out;
}

std::vector<T2ISample> to_samples(const std::vector<T2IRecord>& recs, const TokenizerConfig& cfg,
                                  std::size_t text_len) {
  std::vector<T2ISample> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back({encode_text(r.caption, text_len), encode_image(r.image, cfg)});
  return out;
}

std::vector<EditSample> to_samples(const std::vector<EditRecord>& recs, const TokenizerConfig& cfg,
                                   std::size_t text_len) {
  std::vector<EditSample> out;
  out.reserve(recs.size());
  for (const auto& r : recs)
    out.push_back({encode_text(r.instruction, text_len), encode_image(r.source, cfg), encode_image(r.target, cfg),
                   patchify_mask(r.mask, cfg)});
  return out;
}

}  // namespace nep
