#pragma once
// Tensor container file:
//   "NEPF" | u32 version | u64 header length | header JSON |
//   repeated, sorted by name: u16 name length | name | u8 rank | u32 dims[rank] | f32 data
// All integers and floats little-endian.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "nep/model.hpp"
#include "nep/tokenizer.hpp"

namespace nep {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorFile {
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> tensors;  // sorted by name
};

std::vector<std::uint8_t> serialize_tensor_file(const TensorFile& file);
TensorFile parse_tensor_file(const std::vector<std::uint8_t>& bytes);  // throws Corruption
void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

nlohmann::json tokenizer_to_json(const TokenizerConfig& cfg);
TokenizerConfig tokenizer_from_json(const nlohmann::json& j);

struct Checkpoint {
  ModelParams params;
  TokenizerConfig tokenizer;
  nlohmann::json training = nlohmann::json::object();

  nlohmann::json header() const;  // {kind, model, tokenizer, training}
  std::string hash() const;       // config_hash of {model, tokenizer}
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Validates tensor names and shapes against the stored config via count_params.
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint checkpoint_from_file(const TensorFile& file);

}  // namespace nep
