#include "nep/service.hpp"

#include <chrono>
#include <random>

#include "httplib.h"
#include "nep/error.hpp"

namespace nep {

using nlohmann::json;

namespace {

constexpr char kCrockford[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";

std::uint64_t unix_ms_now() {
  return std::uint64_t(
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
          .count());
}

double ms_now() { return double(unix_ms_now()); }

struct ApiError {
  int status;
  std::string code, message;
};

[[noreturn]] void reject(int status, const std::string& code, const std::string& message) {
  throw ApiError{status, code, message};
}

HttpResponse error_response(int status, const std::string& code, const std::string& message) {
  return {status, {{"error", {{"code", code}, {"message", message}}}}};
}

const char* code_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::Input: return "bad_input";
    case ErrorKind::Config: return "invalid_params";
    case ErrorKind::Layout: return "layout_error";
    case ErrorKind::Corruption: return "corrupt_data";
    case ErrorKind::Undefined: return "undefined";
    case ErrorKind::NonFinite: return "non_finite";
  }
  return "internal";
}

std::uint64_t seed_of(const json& req) {
  if (!req.contains("seed")) return 0;
  if (!req.at("seed").is_number_unsigned()) reject(400, "invalid_params", "seed must be a non-negative integer");
  return req.at("seed").get<std::uint64_t>();
}

std::string string_field(const json& req, const char* key, bool required) {
  if (!req.contains(key)) {
    if (required) reject(400, "invalid_params", std::string("missing field '") + key + "'");
    return {};
  }
  if (!req.at(key).is_string()) reject(400, "invalid_params", std::string("field '") + key + "' must be a string");
  return req.at(key).get<std::string>();
}

std::size_t count_field(const json& req, const char* key, std::size_t fallback) {
  if (!req.contains(key)) return fallback;
  if (!req.at(key).is_number_unsigned()) reject(400, "invalid_params", std::string(key) + " must be >= 0");
  return req.at(key).get<std::size_t>();
}

SamplerConfig sampler_of(const json& req) {
  if (!req.contains("sampler")) return {};
  try {
    return SamplerConfig::from_json(req.at("sampler"));
  } catch (const json::exception& e) {
    reject(400, "invalid_params", std::string("bad sampler: ") + e.what());
  } catch (const Error& e) {
    reject(400, "invalid_params", e.what());
  }
}

TextTokens text_of(const std::string& s, std::size_t text_len) {
  try {
    return encode_text(s, text_len);
  } catch (const Error& e) {
    const bool empty = s.find_first_not_of(" \t\r\n") == std::string::npos;
    reject(400, empty ? "empty_prompt" : "unknown_word", e.what());
  }
}

Image image_of(const json& req, const char* key, std::size_t channels) {
  const auto b64 = string_field(req, key, true);
  try {
    return decode_png(base64_decode(b64), channels);
  } catch (const Error& e) {
    reject(400, "bad_image", std::string(key) + ": " + e.what());
  }
}

std::string png_b64(const Image& img) { return base64_encode(encode_png(img)); }

}  // namespace

// ---- ULIDs

UlidGenerator::UlidGenerator(std::uint64_t entropy_seed) : rng_(entropy_seed, 0x756c6964) {}

std::string UlidGenerator::next() { return next(unix_ms_now()); }

std::string UlidGenerator::next(std::uint64_t unix_ms) {
  std::lock_guard lock(mu_);
  if (unix_ms <= last_ms_ && (hi_ | lo_) != 0) {
    // Same (or earlier) millisecond: increment the random part to stay ordered.
    unix_ms = last_ms_;
    if (++lo_ == 0) hi_ = (hi_ + 1) & 0xffff;
  } else {
    last_ms_ = unix_ms;
    hi_ = rng_.next_u64() & 0xffff;
    lo_ = rng_.next_u64();
  }
  std::string out(26, '0');
  std::uint64_t t = unix_ms & 0xffffffffffffULL;
  for (int i = 9; i >= 0; --i, t >>= 5) out[std::size_t(i)] = kCrockford[t & 31];
  // 80 random bits as 16 groups of 5, most significant first.
  for (int i = 0; i < 16; ++i) {
    const int shift = 75 - 5 * i;  // bit offset of this group's low bit
    std::uint64_t v;
    if (shift >= 64)
      v = hi_ >> (shift - 64);
    else if (shift > 59)
      v = (lo_ >> shift) | (hi_ << (64 - shift));
    else
      v = lo_ >> shift;
    out[std::size_t(10 + i)] = kCrockford[v & 31];
  }
  return out;
}

// ---- jobs

const char* name(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
  }
  return "?";
}

json Job::to_json() const {
  json j = {{"id", id},
            {"kind", kind},
            {"state", name(state)},
            {"request", request},
            {"timing", {{"created_ms", created_ms}, {"started_ms", started_ms}, {"finished_ms", finished_ms}}}};
  if (state == JobState::Done) j["result"] = result;
  if (state == JobState::Failed) j["error"] = error;
  return j;
}

Service::Service(std::optional<Checkpoint> model, std::optional<Critic> critic, const ServiceConfig& cfg)
    : model_(std::move(model)), critic_(std::move(critic)), cfg_(cfg), ulids_(std::random_device{}()) {
  std::size_t n = cfg_.workers ? cfg_.workers : std::max(1u, std::thread::hardware_concurrency());
  for (std::size_t i = 0; i < n; ++i) workers_.emplace_back([this] { worker_loop(); });
}

Service::~Service() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  work_cv_.notify_all();
  for (auto& t : workers_) t.join();
}

void Service::worker_loop() {
  for (;;) {
    std::pair<std::string, std::function<json()>> item;
    {
      std::unique_lock lock(mu_);
      work_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      item = std::move(queue_.front());
      queue_.pop_front();
      auto& job = jobs_.at(item.first);
      job.state = JobState::Running;
      job.started_ms = ms_now();
    }
    json result, err;
    bool ok = true;
    try {
      result = item.second();
    } catch (const Error& e) {
      ok = false;
      err = {{"code", code_of(e.kind())}, {"message", e.what()}};
    } catch (const std::exception& e) {
      ok = false;
      err = {{"code", "internal"}, {"message", e.what()}};
    }
    {
      std::lock_guard lock(mu_);
      auto& job = jobs_.at(item.first);
      // The result becomes visible together with the final state.
      if (ok) {
        job.result = std::move(result);
        job.state = JobState::Done;
      } else {
        job.error = std::move(err);
        job.state = JobState::Failed;
      }
      job.finished_ms = ms_now();
    }
    done_cv_.notify_all();
  }
}

HttpResponse Service::submit(const std::string& kind, json request, std::function<json()> work) {
  Job job;
  job.id = ulids_.next();
  job.kind = kind;
  job.request = std::move(request);
  job.created_ms = ms_now();
  const auto id = job.id;
  {
    std::lock_guard lock(mu_);
    jobs_.emplace(id, std::move(job));
    queue_.emplace_back(id, std::move(work));
  }
  work_cv_.notify_one();
  return {202, {{"id", id}}};
}

std::optional<json> Service::wait(const std::string& id, double timeout_ms) {
  std::unique_lock lock(mu_);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double, std::milli>(timeout_ms);
  auto finished = [&] {
    const auto it = jobs_.find(id);
    return it == jobs_.end() || it->second.state == JobState::Done || it->second.state == JobState::Failed;
  };
  if (!done_cv_.wait_until(lock, deadline, finished)) return std::nullopt;
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second.to_json();
}

// ---- endpoints

HttpResponse Service::post_generate(const json& req) {
  if (!model_) reject(503, "model_not_loaded", "no model checkpoint loaded");
  const auto text = text_of(string_field(req, "prompt", true), model_->params.cfg.text_len);
  const auto sampler = sampler_of(req);
  const auto seed = seed_of(req);
  const auto& ck = *model_;
  return submit("generate", req, [&ck, text, sampler, seed] {
    const auto g = generate_image(ck.params, ck.tokenizer, text, sampler, seed);
    return json{{"image", png_b64(g.image)},
                {"tokens", g.grid.ids},
                {"logprob_sum", g.logprob_sum},
                {"width", g.image.width},
                {"height", g.image.height}};
  });
}

HttpResponse Service::post_edit(const json& req) {
  if (!model_) reject(503, "model_not_loaded", "no model checkpoint loaded");
  const auto& tok = model_->tokenizer;
  EditRequest er;
  er.instruction = string_field(req, "instruction", true);
  const auto text = text_of(er.instruction, model_->params.cfg.text_len);
  er.source = image_of(req, "image", 3);
  if (er.source.height != tok.image_h || er.source.width != tok.image_w)
    reject(400, "image_size_mismatch",
           "image must be " + std::to_string(tok.image_w) + "x" + std::to_string(tok.image_h));
  if (req.contains("mask") && !req.at("mask").is_null()) {
    er.mask = image_of(req, "mask", 1);
    if (er.mask->height != er.source.height || er.mask->width != er.source.width)
      reject(400, "mask_size_mismatch", "mask and image sizes differ");
  }
  if (er.mask && !model_->params.cfg.edit_extension)
    reject(409, "stage1_checkpoint", "mask-conditioned editing needs a fine-tuned (stage-2) checkpoint");
  er.sampler = sampler_of(req);
  er.seed = seed_of(req);
  er.mask_previous = req.value("mask_previous", false);
  const auto& ck = *model_;
  return submit("edit", req, [&ck, er, text] {
    EditResult res;
    if (ck.params.cfg.edit_extension) {
      res = nep_edit(ck.params, ck.tokenizer, er);
    } else {
      // Stage-1 model without a mask: regenerate everything from the text.
      Rng rng(er.seed, 0x65646974);
      res = zero_shot_edit(ck.params, encode_image(er.source, ck.tokenizer), {}, text, er.sampler, rng);
      res.image = decode_tokens(res.grid, ck.tokenizer);
    }
    std::optional<EditMask> m;
    if (er.mask) m = patchify_mask(*er.mask, ck.tokenizer);
    return json{{"image", png_b64(res.image)},
                {"l_e", res.l_e},
                {"steps", res.steps},
                {"positions", res.positions},
                {"generated", res.generated},
                {"logprob_sum", res.logprob_sum},
                {"full_regeneration", res.full_regeneration},
                {"checksum_outside_source", outside_mask_checksum(er.source, m, ck.tokenizer)},
                {"checksum_outside_result", outside_mask_checksum(res.image, m, ck.tokenizer)}};
  });
}

HttpResponse Service::post_refine(const json& req) {
  if (!model_) reject(503, "model_not_loaded", "no model checkpoint loaded");
  if (!critic_) reject(503, "critic_missing", "no critic checkpoint loaded");
  if (!model_->params.cfg.edit_extension)
    reject(409, "stage1_checkpoint", "refinement needs a fine-tuned (stage-2) checkpoint");
  const auto& tok = model_->tokenizer;
  const auto text = text_of(string_field(req, "prompt", true), model_->params.cfg.text_len);
  RefineConfig rc;
  rc.rounds = count_field(req, "rounds", rc.rounds);
  rc.k = count_field(req, "k", rc.k);
  rc.candidates = count_field(req, "candidates", rc.candidates);
  rc.mask_previous = req.value("mask_previous", rc.mask_previous);
  rc.sampler = sampler_of(req);
  if (rc.k > tok.grid_len()) reject(400, "invalid_params", "k must be in [0, L]");
  if (rc.rounds > cfg_.max_rounds) reject(400, "invalid_params", "rounds too large");
  if (rc.candidates < 1 || rc.candidates > cfg_.max_candidates) reject(400, "invalid_params", "bad candidate count");
  std::optional<Image> image;
  if (req.contains("image") && !req.at("image").is_null()) {
    image = image_of(req, "image", 3);
    if (image->height != tok.image_h || image->width != tok.image_w)
      reject(400, "image_size_mismatch", "image size does not match the tokenizer");
  }
  const auto seed = seed_of(req);
  const auto& ck = *model_;
  const auto& critic = *critic_;
  return submit("refine", req, [&ck, &critic, text, rc, image, seed] {
    const TokenGrid initial = image ? encode_image(*image, ck.tokenizer)
                                    : generate_image(ck.params, ck.tokenizer, text, rc.sampler, seed).grid;
    Rng rng(seed, 0x726566);
    const auto traj = refine_loop(ck.params, critic, ck.tokenizer, initial, text, rc, rng);
    json rounds = json::array();
    for (std::size_t r = 0; r < traj.size(); ++r)
      rounds.push_back({{"round", r},
                        {"image", png_b64(decode_tokens(traj[r].grid, ck.tokenizer))},
                        {"reward", traj[r].reward},
                        {"accepted", traj[r].accepted},
                        {"revision", traj[r].revision},
                        {"candidate_scores", traj[r].candidate_scores}});
    return json{{"trajectory", rounds}};
  });
}

HttpResponse Service::get_job(const std::string& id) {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) return error_response(404, "not_found", "unknown job id");
  return {200, it->second.to_json()};
}

HttpResponse Service::health() const {
  json ckpts = json::object();
  if (model_)
    ckpts["model"] = {{"hash", model_->hash()},
                      {"stage", model_->params.cfg.edit_extension ? 2 : 1},
                      {"config", model_->params.cfg.to_json()},
                      {"tokenizer", tokenizer_to_json(model_->tokenizer)}};
  if (critic_) ckpts["critic"] = {{"hash", config_hash(critic_->cfg.to_json())}, {"config", critic_->cfg.to_json()}};
  return {200,
          {{"status", "ok"},
           {"model_loaded", model_.has_value()},
           {"critic_loaded", critic_.has_value()},
           {"checkpoints", ckpts},
           {"config", {{"workers", workers_.size()}, {"max_rounds", cfg_.max_rounds}}}}};
}

HttpResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  try {
    if (method == "GET") {
      if (path == "/v1/health") return health();
      const std::string prefix = "/v1/jobs/";
      if (path.rfind(prefix, 0) == 0) return get_job(path.substr(prefix.size()));
      return error_response(404, "not_found", "no route " + path);
    }
    if (method != "POST") return error_response(405, "method_not_allowed", method);
    if (path != "/v1/generate" && path != "/v1/edit" && path != "/v1/refine")
      return error_response(404, "not_found", "no route " + path);
    json req;
    try {
      req = json::parse(body);
    } catch (const json::exception& e) {
      return error_response(400, "invalid_json", e.what());
    }
    if (!req.is_object()) return error_response(400, "invalid_json", "request body must be an object");
    if (path == "/v1/generate") return post_generate(req);
    if (path == "/v1/edit") return post_edit(req);
    return post_refine(req);
  } catch (const ApiError& e) {
    return error_response(e.status, e.code, e.message);
  } catch (const json::exception& e) {
    return error_response(400, "invalid_params", e.what());
  }
}

void Service::bind(httplib::Server& server) {
  auto forward = [this](const httplib::Request& rq, httplib::Response& rs) {
    const auto r = handle(rq.method, rq.path, rq.body);
    rs.status = r.status;
    rs.set_content(r.body.dump(), "application/json");
  };
  server.Get(R"(/v1/.*)", forward);
  server.Post(R"(/v1/.*)", forward);
}

}  // namespace nep
