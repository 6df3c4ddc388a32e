#pragma once
// Seed-deterministic synthetic shards (JSON lines) and their conversion to
// training samples.

#include <filesystem>
#include <string>
#include <vector>

#include "nep/image.hpp"
#include "nep/scene.hpp"
#include "nep/train.hpp"

namespace nep {

enum class ShardKind { T2I, Edit };

struct T2IRecord {
  std::string caption;
  Image image;
  scene::SceneSpec scene;
};

struct EditRecord {
  std::string instruction;
  Image source, target, mask;  // mask: 1 channel, 0/255
  scene::EditOp op = scene::EditOp::Recolor;
  scene::SceneSpec source_scene, target_scene;
};

// Sample i depends only on (seed, i).
std::vector<T2IRecord> generate_t2i(std::size_t count, std::uint64_t seed, const TokenizerConfig& cfg);
std::vector<EditRecord> generate_edit(std::size_t count, std::uint64_t seed, const TokenizerConfig& cfg);

std::string to_jsonl(const T2IRecord& r);
std::string to_jsonl(const EditRecord& r);
T2IRecord t2i_from_json(const nlohmann::json& j);
EditRecord edit_from_json(const nlohmann::json& j);

// Writes `count` records to path; returns the number of bytes written.
std::size_t make_dataset(ShardKind kind, std::size_t count, std::uint64_t seed, const TokenizerConfig& cfg,
                         const std::filesystem::path& path);

std::vector<T2IRecord> read_t2i_shard(const std::filesystem::path& path);
std::vector<EditRecord> read_edit_shard(const std::filesystem::path& path);

std::vector<T2ISample> to_samples(const std::vector<T2IRecord>& recs, const TokenizerConfig& cfg,
                                  std::size_t text_len);
std::vector<EditSample> to_samples(const std::vector<EditRecord>& recs, const TokenizerConfig& cfg,
                                   std::size_t text_len);

}  // namespace nep
