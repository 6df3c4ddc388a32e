// Command-line front end: data generation, both training stages, critic
// training, generation, editing, refinement, evaluation and the HTTP server.
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "httplib.h"
#include "nep/benchmark.hpp"
#include "nep/dataset.hpp"
#include "nep/error.hpp"
#include "nep/metrics.hpp"
#include "nep/scene.hpp"
#include "nep/service.hpp"

using namespace nep;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string config;  // JSON text or a path to a JSON file
  std::string out;
};

json load_config(const std::string& arg) {
  if (arg.empty()) return json::object();
  if (arg.front() == '{') return json::parse(arg);
  std::ifstream in(arg);
  require(bool(in), ErrorKind::Input, "cannot open config " + arg);
  return json::parse(in);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(bool(out), ErrorKind::Input, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string need_out(const Globals& g, const char* what) {
  require(!g.out.empty(), ErrorKind::Config, std::string(what) + ": --out is required");
  return g.out;
}

// User keys over the defaults' JSON.
template <class C>
C with_defaults(const json& config, const char* key) {
  json j = C{}.to_json();
  if (config.contains(key)) j.update(config.at(key));
  return C::from_json(j);
}

// Progress line every `every` steps.
StepCallback progress(std::size_t every) {
  return [every](const LogEntry& e) {
    if (e.step % every == 0)
      std::cerr << "step " << e.step << " loss " << e.loss << " (" << int(e.elapsed_ms / 1000) << " s)\n";
    return true;
  };
}

int run_main(int argc, char** argv) {
  CLI::App app{"Next-editing-token prediction: train, edit, refine, evaluate, serve"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--config", g.config, "Config JSON (inline or file path)");
  app.add_option("--out", g.out, "Output path");

  // make-data
  auto* mk = app.add_subcommand("make-data", "Write a synthetic shard (JSON lines)");
  std::string kind = "t2i";
  std::size_t count = 1000;
  mk->add_option("--kind", kind, "t2i | edit")->check(CLI::IsMember({"t2i", "edit"}));
  mk->add_option("--count", count, "Number of records");

  // train-t2i / train-edit
  std::string data, captions, ckpt, critic_path, log_path;
  auto* t1 = app.add_subcommand("train-t2i", "Stage 1: random-order text-to-image pretraining");
  t1->add_option("--data", data, "t2i shard")->required();
  t1->add_option("--log", log_path, "Run log (JSON lines)");
  auto* t2 = app.add_subcommand("train-edit", "Stage 2: editing fine-tune from a stage-1 checkpoint");
  t2->add_option("--ckpt", ckpt, "Stage-1 checkpoint")->required();
  t2->add_option("--data", data, "Edit shard")->required();
  t2->add_option("--captions", captions, "t2i shard for refinement-style samples");
  t2->add_option("--log", log_path, "Run log (JSON lines)");

  auto* tc = app.add_subcommand("train-critic", "Train the refinement critic on labeled corruptions");
  tc->add_option("--count", count, "Training samples");

  // generate / edit / refine
  std::string prompt, image_path, mask_path, instruction, out_dir;
  std::size_t rounds = 4, k = 16, candidates = 4;
  bool greedy = false;
  auto* gen = app.add_subcommand("generate", "Text-to-image generation");
  gen->add_option("--ckpt", ckpt)->required();
  gen->add_option("--prompt", prompt)->required();
  gen->add_flag("--greedy", greedy);

  auto* ed = app.add_subcommand("edit", "Mask-scoped editing; writes PNG plus a JSON sidecar");
  ed->add_option("--ckpt", ckpt)->required();
  ed->add_option("--image", image_path)->required();
  ed->add_option("--mask", mask_path, "Single-channel mask PNG (omit for full regeneration)");
  ed->add_option("--instruction", instruction)->required();
  ed->add_flag("--greedy", greedy);

  auto* rf = app.add_subcommand("refine", "Critic-guided refinement; per-round PNGs and trajectory.json");
  rf->add_option("--ckpt", ckpt)->required();
  rf->add_option("--critic", critic_path)->required();
  rf->add_option("--prompt", prompt)->required();
  rf->add_option("--image", image_path, "Start from this image instead of generating");
  rf->add_option("--rounds", rounds);
  rf->add_option("--k", k);
  rf->add_option("--candidates", candidates);
  rf->add_option("--out-dir", out_dir)->required();

  auto* ev = app.add_subcommand("eval", "Editing benchmark on an edit shard, optional generation FD");
  std::string mode = "nep";
  std::size_t limit = 0;
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--data", data, "Edit shard")->required();
  ev->add_option("--mode", mode)->check(CLI::IsMember({"nep", "ntp_full"}));
  ev->add_option("--captions", captions, "t2i shard: also report Frechet distance of generations");
  ev->add_option("--limit", limit, "Use only the first N records");

  auto* sv = app.add_subcommand("serve", "HTTP service");
  int port = 8080;
  std::size_t workers = 0;
  std::string host = "0.0.0.0";
  sv->add_option("--ckpt", ckpt, "Model checkpoint");
  sv->add_option("--critic", critic_path, "Critic checkpoint");
  sv->add_option("--port", port);
  sv->add_option("--host", host);
  sv->add_option("--workers", workers, "Worker threads (0 = cores)");

  CLI11_PARSE(app, argc, argv);
  const json config = load_config(g.config);
  TokenizerConfig tok = config.contains("tokenizer") ? tokenizer_from_json(config.at("tokenizer")) : TokenizerConfig{};
  SamplerConfig sampler = config.contains("sampler") ? SamplerConfig::from_json(config.at("sampler")) : SamplerConfig{};
  if (greedy) sampler.greedy = true;

  if (*mk) {
    const auto bytes =
        make_dataset(kind == "t2i" ? ShardKind::T2I : ShardKind::Edit, count, g.seed, tok, need_out(g, "make-data"));
    std::cout << json{{"records", count}, {"bytes", bytes}, {"path", g.out}}.dump() << '\n';
  } else if (*t1) {
    const auto out = need_out(g, "train-t2i");
    auto mc = with_defaults<ModelConfig>(config, "model");
    mc.edit_extension = false;
    TrainConfig tcfg = config.contains("training") ? TrainConfig::from_json(config.at("training")) : TrainConfig{};
    tcfg.seed = g.seed;
    const auto samples = to_samples(read_t2i_shard(data), tok, mc.text_len);
    Rng rng(g.seed, 0x696e6974);
    auto params = ModelParams::init(mc, rng);
    const auto log = train_t2i(params, samples, tcfg, nullptr, progress(100));
    save_checkpoint({params, tok, {{"stage", 1}, {"config", tcfg.to_json()}, {"config_hash", log.config_hash}}}, out);
    log.write_jsonl(log_path.empty() ? out + ".log.jsonl" : log_path);
  } else if (*t2) {
    const auto out = need_out(g, "train-edit");
    auto ck = load_checkpoint(ckpt);
    tok = ck.tokenizer;
    TrainConfig tcfg = config.contains("training") ? TrainConfig::from_json(config.at("training")) : TrainConfig{};
    tcfg.seed = g.seed;
    const auto edits = to_samples(read_edit_shard(data), tok, ck.params.cfg.text_len);
    std::vector<T2ISample> caps;
    if (!captions.empty()) caps = to_samples(read_t2i_shard(captions), tok, ck.params.cfg.text_len);
    if (!ck.params.cfg.edit_extension) {
      Rng rng(g.seed, 0x65787465);
      ck.params.add_edit_extension(rng);
    }
    const auto log = train_edit(ck.params, edits, caps, tcfg, nullptr, progress(100));
    ck.training = {{"stage", 2}, {"config", tcfg.to_json()}, {"config_hash", log.config_hash}};
    save_checkpoint(ck, out);
    log.write_jsonl(log_path.empty() ? out + ".log.jsonl" : log_path);
  } else if (*tc) {
    const auto out = need_out(g, "train-critic");
    auto cc = with_defaults<CriticConfig>(config, "critic");
    CriticTrainConfig ctc;
    if (config.contains("critic_training")) {
      const auto& j = config.at("critic_training");
      ctc.steps = j.value("steps", ctc.steps);
      ctc.batch_size = j.value("batch_size", ctc.batch_size);
      ctc.lr = j.value("lr", ctc.lr);
    }
    ctc.seed = g.seed;
    const auto samples = make_critic_samples(count, g.seed, tok, 16);
    Rng rng(g.seed, 0x63726974);
    auto critic = Critic::init(cc, rng);
    const auto losses = train_critic(critic, samples, ctc);
    save_critic(critic, out);
    std::cout << json{{"final_loss", losses.back()}, {"mse", critic_mse(critic, samples)}}.dump() << '\n';
  } else if (*gen) {
    const auto out = need_out(g, "generate");
    const auto ck = load_checkpoint(ckpt);
    const auto res =
        generate_image(ck.params, ck.tokenizer, encode_text(prompt, ck.params.cfg.text_len), sampler, g.seed);
    write_png(out, res.image);
    std::cout << json{{"logprob_sum", res.logprob_sum}, {"tokens", res.grid.ids}}.dump() << '\n';
  } else if (*ed) {
    const auto out = need_out(g, "edit");
    const auto ck = load_checkpoint(ckpt);
    EditRequest req{read_png(image_path), std::nullopt, instruction, sampler, g.seed, false};
    if (!mask_path.empty()) req.mask = read_png(mask_path, 1);
    const auto res = nep_edit(ck.params, ck.tokenizer, req);
    write_png(out, res.image);
    const json side = {{"l_e", res.l_e}, {"steps", res.steps}, {"logprob_sum", res.logprob_sum}};
    write_json(fs::path(out).replace_extension(".json"), side);
    std::cout << side.dump() << '\n';
  } else if (*rf) {
    const auto ck = load_checkpoint(ckpt);
    const auto critic = load_critic(critic_path);
    const auto text = encode_text(prompt, ck.params.cfg.text_len);
    RefineConfig rc;
    rc.rounds = rounds;
    rc.k = k;
    rc.candidates = candidates;
    rc.sampler = sampler;
    const TokenGrid initial = image_path.empty()
                                  ? generate_image(ck.params, ck.tokenizer, text, sampler, g.seed).grid
                                  : encode_image(read_png(image_path), ck.tokenizer);
    Rng rng(g.seed, 0x726566);
    const auto traj = refine_loop(ck.params, critic, ck.tokenizer, initial, text, rc, rng);
    fs::create_directories(out_dir);
    json rounds_json = json::array();
    for (std::size_t r = 0; r < traj.size(); ++r) {
      const auto png = "round_" + std::to_string(r) + ".png";
      write_png(fs::path(out_dir) / png, decode_tokens(traj[r].grid, ck.tokenizer));
      rounds_json.push_back({{"round", r},
                             {"image", png},
                             {"reward", traj[r].reward},
                             {"accepted", traj[r].accepted},
                             {"revision", traj[r].revision},
                             {"candidate_scores", traj[r].candidate_scores}});
    }
    write_json(fs::path(out_dir) / "trajectory.json", {{"prompt", prompt}, {"seed", g.seed}, {"rounds", rounds_json}});
    std::cout << rounds_json.back().dump() << '\n';
  } else if (*ev) {
    const auto ck = load_checkpoint(ckpt);
    auto records = read_edit_shard(data);
    if (limit && limit < records.size()) records.resize(limit);
    BenchmarkConfig bc;
    bc.mode = bench_mode_from(mode);
    bc.seed = g.seed;
    bc.sampler = sampler;
    if (!config.contains("sampler")) bc.sampler.greedy = true;
    json report = run_benchmark(ck.params, ck.tokenizer, records, bc);
    if (!captions.empty()) {
      auto caps = read_t2i_shard(captions);
      if (limit && limit < caps.size()) caps.resize(limit);
      std::vector<std::vector<double>> real, fake;
      double match = 0;
      const Rng base(g.seed, 0x66646973);
      for (std::size_t i = 0; i < caps.size(); ++i) {
        const auto res = generate_image(ck.params, ck.tokenizer, encode_text(caps[i].caption, ck.params.cfg.text_len),
                                        sampler, base.fork(i).next_u64());
        real.push_back(proxy_features(caps[i].image, ck.tokenizer));
        fake.push_back(proxy_features(res.image, ck.tokenizer));
        match += scene::scene_match_score(res.grid, scene::facts_of(caps[i].scene), ck.tokenizer);
      }
      report["generation"] = {{"count", caps.size()},
                              {"frechet", frechet_distance(real, fake)},
                              {"scene_match", match / double(caps.size())}};
    }
    if (!g.out.empty()) write_json(g.out, report);
    std::cout << report.at("aggregate").dump() << '\n';
  } else if (*sv) {
    std::optional<Checkpoint> model;
    std::optional<Critic> critic;
    if (!ckpt.empty()) model = load_checkpoint(ckpt);
    if (!critic_path.empty()) critic = load_critic(critic_path);
    ServiceConfig scfg;
    scfg.workers = workers;
    Service service(std::move(model), std::move(critic), scfg);
    httplib::Server server;
    service.bind(server);
    std::cerr << "listening on " << host << ":" << port << " with " << service.worker_count() << " workers\n";
    if (!server.listen(host, port)) {
      std::cerr << "cannot listen on " << host << ":" << port << '\n';
      return 1;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_main(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
