#include "nep/benchmark.hpp"

#include "nep/checkpoint.hpp"
#include "nep/error.hpp"
#include "nep/metrics.hpp"

namespace nep {

using nlohmann::json;

const char* name(BenchMode m) { return m == BenchMode::Nep ? "nep" : "ntp_full"; }

BenchMode bench_mode_from(const std::string& s) {
  if (s == "nep") return BenchMode::Nep;
  if (s == "ntp_full") return BenchMode::NtpFull;
  fail(ErrorKind::Config, "unknown benchmark mode '" + s + "'");
}

json run_benchmark(const ModelParams& params, const TokenizerConfig& tok, const std::vector<EditRecord>& records,
                   const BenchmarkConfig& cfg) {
  require(!records.empty(), ErrorKind::Input, "benchmark: empty shard");
  const Rng base(cfg.seed, 0x62656e63);
  json per = json::array();
  double l1 = 0, l2 = 0, fsim = 0, out_sim = 0, dir_sim = 0, steps = 0;
  std::size_t dir_n = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    EditRequest req{r.source, std::nullopt, r.instruction, cfg.sampler, base.fork(i).next_u64(), false};
    if (cfg.mode == BenchMode::Nep) req.mask = r.mask;
    const auto res = nep_edit(params, tok, req);
    const auto pm = pixel_metrics(res.image, r.target);
    const double fs = feature_similarity(res.image, r.target, tok);
    const auto dm = directional_metrics(r.source, res.image, scene::caption(r.source_scene),
                                        scene::caption(r.target_scene), tok);
    json s = {{"index", i},     {"op", scene::name(r.op)}, {"l_e", res.l_e},          {"steps", res.steps},
              {"l1", pm.l1},    {"l2", pm.l2},             {"feature_sim", fs},       {"out_sim", dm.out_sim}};
    if (dm.dir_defined) {
      s["dir_sim"] = dm.dir_sim;
      dir_sim += dm.dir_sim;
      ++dir_n;
    } else {
      s["dir_sim"] = nullptr;
    }
    per.push_back(s);
    l1 += pm.l1;
    l2 += pm.l2;
    fsim += fs;
    out_sim += dm.out_sim;
    steps += double(res.steps);
  }
  const double n = double(records.size());
  json agg = {{"count", records.size()}, {"l1", l1 / n},          {"l2", l2 / n},
              {"feature_sim", fsim / n}, {"out_sim", out_sim / n}, {"steps", steps / n},
              {"dir_sim", dir_n ? json(dir_sim / double(dir_n)) : json(nullptr)}, {"dir_defined", dir_n}};
  const json run = {{"model", params.cfg.to_json()},
                    {"tokenizer", tokenizer_to_json(tok)},
                    {"mode", name(cfg.mode)},
                    {"seed", cfg.seed},
                    {"sampler", cfg.sampler.to_json()}};
  return {{"per_sample", per}, {"aggregate", agg}, {"config_hash", config_hash(run)}};
}

}  // namespace nep
