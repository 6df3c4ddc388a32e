#pragma once
// Editing benchmark: mask-scoped editing versus full raster regeneration on
// the same requests, scored against the ground-truth targets.

#include "json.hpp"
#include "nep/dataset.hpp"
#include "nep/edit.hpp"

namespace nep {

enum class BenchMode { Nep, NtpFull };

const char* name(BenchMode m);
BenchMode bench_mode_from(const std::string& s);  // "nep" | "ntp_full"

struct BenchmarkConfig {
  BenchMode mode = BenchMode::Nep;
  std::uint64_t seed = 0;
  SamplerConfig sampler{true, 1.0f, 0, std::nullopt};
};

// {per_sample: [...], aggregate: {...}, config_hash}. Sample i is edited with
// seed fork(i) of the run seed, so reports are reproducible.
nlohmann::json run_benchmark(const ModelParams& params, const TokenizerConfig& tok,
                             const std::vector<EditRecord>& records, const BenchmarkConfig& cfg);

}  // namespace nep
