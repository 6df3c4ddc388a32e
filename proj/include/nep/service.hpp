#pragma once
// HTTP/JSON facade: generation, editing and refinement run as asynchronous
// jobs on a bounded worker pool; clients poll /v1/jobs/{id}.
//
//   POST /v1/generate {prompt, seed?, sampler?}
//   POST /v1/edit     {image, mask?, instruction, seed?, sampler?, mask_previous?}
//   POST /v1/refine   {image?, prompt, rounds, k, candidates, seed?, sampler?}
//   GET  /v1/jobs/{id}
//   GET  /v1/health
//
// Errors are {"error": {"code", "message"}}.
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "nep/checkpoint.hpp"
#include "nep/tts.hpp"

namespace httplib {
class Server;
}

namespace nep {

// 26-character Crockford base32: 48-bit millisecond time, then 80 random
// bits. Ids from one generator are strictly increasing.
class UlidGenerator {
 public:
  explicit UlidGenerator(std::uint64_t entropy_seed);
  std::string next(std::uint64_t unix_ms);
  std::string next();

 private:
  std::mutex mu_;
  Rng rng_;
  std::uint64_t last_ms_ = 0;
  std::uint64_t hi_ = 0, lo_ = 0;  // 80-bit random part: 16 + 64 bits
};

enum class JobState { Queued, Running, Done, Failed };
const char* name(JobState s);

struct Job {
  std::string id;
  std::string kind;  // generate | edit | refine
  JobState state = JobState::Queued;
  nlohmann::json request;
  nlohmann::json result;  // set when done
  nlohmann::json error;   // {code, message} when failed
  double created_ms = 0, started_ms = 0, finished_ms = 0;
  nlohmann::json to_json() const;
};

struct ServiceConfig {
  std::size_t workers = 0;  // 0 = hardware concurrency
  std::size_t max_rounds = 16;
  std::size_t max_candidates = 16;
};

struct HttpResponse {
  int status = 200;
  nlohmann::json body;
};

class Service {
 public:
  Service(std::optional<Checkpoint> model, std::optional<Critic> critic, const ServiceConfig& cfg = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Transport-independent routing; bind() forwards httplib requests here.
  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body);
  void bind(httplib::Server& server);

  // Blocks until the job is done or failed (or the timeout passes); returns
  // its JSON. Used by tests and the CLI.
  std::optional<nlohmann::json> wait(const std::string& id, double timeout_ms);
  std::size_t worker_count() const { return workers_.size(); }

 private:
  HttpResponse submit(const std::string& kind, nlohmann::json request, std::function<nlohmann::json()> work);
  HttpResponse post_generate(const nlohmann::json& req);
  HttpResponse post_edit(const nlohmann::json& req);
  HttpResponse post_refine(const nlohmann::json& req);
  HttpResponse get_job(const std::string& id);
  HttpResponse health() const;
  void worker_loop();

  std::optional<Checkpoint> model_;
  std::optional<Critic> critic_;
  ServiceConfig cfg_;
  UlidGenerator ulids_;

  std::mutex mu_;
  std::condition_variable work_cv_, done_cv_;
  std::map<std::string, Job> jobs_;
  std::deque<std::pair<std::string, std::function<nlohmann::json()>>> queue_;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace nep
