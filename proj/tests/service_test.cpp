#include "doctest.h"

#include <set>

#include "httplib.h"
#include "nep/error.hpp"
#include "nep/scene.hpp"
#include "nep/service.hpp"

using namespace nep;
using nlohmann::json;

namespace {

Checkpoint tiny_checkpoint(bool stage2) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ffn_dim = 32;
  Rng rng(1);
  Checkpoint ck{ModelParams::init(c, rng), TokenizerConfig{}, json::object()};
  if (stage2) ck.params.add_edit_extension(rng);
  return ck;
}

Critic tiny_critic() {
  Rng rng(2);
  return Critic::init(CriticConfig{}, rng);
}

std::string b64_png(const Image& img) { return base64_encode(encode_png(img)); }

Image scene_image(std::uint64_t seed) {
  Rng rng(seed);
  return scene::render(scene::random_scene(rng, 8, 8), TokenizerConfig{});
}

Image block_mask(std::size_t r0, std::size_t c0, std::size_t n) {
  Image m(32, 32, 1);
  for (std::size_t y = r0 * 4; y < (r0 + n) * 4; ++y)
    for (std::size_t x = c0 * 4; x < (c0 + n) * 4; ++x) *m.at(y, x) = 255;
  return m;
}

// Posts and waits; returns the finished job.
json run(Service& s, const std::string& path, const json& body) {
  const auto r = s.handle("POST", path, body.dump());
  REQUIRE(r.status == 202);
  const auto done = s.wait(r.body.at("id"), 60000);
  REQUIRE(done.has_value());
  return *done;
}

std::string error_code(const HttpResponse& r) { return r.body.at("error").at("code"); }

}  // namespace

TEST_CASE("ulids are 26 crockford characters and strictly increasing") {
  UlidGenerator g(7);
  std::string prev;
  const std::string alphabet = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
  for (int i = 0; i < 2000; ++i) {
    const auto id = g.next(1700000000000ULL + std::uint64_t(i / 500));  // repeated milliseconds
    CHECK(id.size() == 26);
    CHECK(id.find_first_not_of(alphabet) == std::string::npos);
    CHECK(id > prev);
    prev = id;
  }
  // The time prefix encodes the millisecond.
  CHECK(g.next(0).substr(0, 10) > "0000000000");
  UlidGenerator h(8);
  CHECK(h.next(1).substr(0, 10) == "0000000001");
}

TEST_CASE("generate is deterministic and returns L tokens") {
  Service s(tiny_checkpoint(true), std::nullopt, {2});
  const json req = {{"prompt", "red square top left on black"}, {"seed", 5}};
  const auto a = run(s, "/v1/generate", req), b = run(s, "/v1/generate", req);
  REQUIRE(a.at("state") == "done");
  CHECK(a.at("result").at("image") == b.at("result").at("image"));
  CHECK(a.at("result").at("tokens").size() == 64);
  const auto img = decode_png(base64_decode(a.at("result").at("image")));
  CHECK(img.width == 32);
  CHECK(img.height == 32);
  const auto c = run(s, "/v1/generate", {{"prompt", "red square top left on black"}, {"seed", 6}});
  CHECK(c.at("result").at("tokens") != a.at("result").at("tokens"));
}

TEST_CASE("generate validates its request") {
  Service s(tiny_checkpoint(false), std::nullopt, {1});
  CHECK(error_code(s.handle("POST", "/v1/generate", R"({"prompt": "  "})")) == "empty_prompt");
  const auto unknown = s.handle("POST", "/v1/generate", R"({"prompt": "a teal square"})");
  CHECK(unknown.status == 400);
  CHECK(error_code(unknown) == "unknown_word");
  CHECK(error_code(s.handle("POST", "/v1/generate", "{not json")) == "invalid_json");
  CHECK(error_code(s.handle("POST", "/v1/generate", R"({"prompt": "red", "seed": -1})")) == "invalid_params");
  CHECK(error_code(s.handle("POST", "/v1/generate", R"({"prompt": "red", "sampler": {"temperature": 0}})")) ==
        "invalid_params");
  Service empty(std::nullopt, std::nullopt, {1});
  const auto r = empty.handle("POST", "/v1/generate", R"({"prompt": "red square"})");
  CHECK(r.status == 503);
  CHECK(error_code(r) == "model_not_loaded");
}

TEST_CASE("edit reports steps equal to l_e and matching outside-mask checksums") {
  Service s(tiny_checkpoint(true), std::nullopt, {2});
  for (int t = 0; t < 4; ++t) {
    const json req = {{"image", b64_png(scene_image(std::uint64_t(t)))},
                      {"mask", b64_png(block_mask(std::size_t(t), 2, 3))},
                      {"instruction", "make the red square blue"},
                      {"seed", t}};
    const auto job = run(s, "/v1/edit", req);
    REQUIRE(job.at("state") == "done");
    const auto& r = job.at("result");
    CHECK(r.at("l_e") == 9);
    CHECK(r.at("steps") == r.at("l_e"));
    CHECK(r.at("checksum_outside_source") == r.at("checksum_outside_result"));
    CHECK(r.at("full_regeneration") == false);
  }
  const auto full = run(s, "/v1/edit", {{"image", b64_png(scene_image(9))}, {"instruction", "add a blue circle"}});
  CHECK(full.at("result").at("steps") == 64);
}

TEST_CASE("edit rejects bad images, size mismatches and stage-1 checkpoints") {
  Service s(tiny_checkpoint(true), std::nullopt, {1});
  const auto img = b64_png(scene_image(1));
  auto post = [&](const json& j) { return s.handle("POST", "/v1/edit", j.dump()); };
  auto bad = post({{"image", "!!!not base64"}, {"instruction", "make the red square blue"}});
  CHECK(bad.status == 400);
  CHECK(error_code(bad) == "bad_image");
  CHECK(error_code(post({{"image", base64_encode({1, 2, 3, 4})}, {"instruction", "make the red square blue"}})) ==
        "bad_image");
  CHECK(error_code(post({{"image", img}, {"mask", b64_png(Image(16, 16, 1))}, {"instruction", "make the red square blue"}})) ==
        "mask_size_mismatch");
  CHECK(error_code(post({{"image", b64_png(Image(16, 16, 3))}, {"instruction", "make the red square blue"}})) ==
        "image_size_mismatch");

  Service s1(tiny_checkpoint(false), std::nullopt, {1});
  const auto r = s1.handle("POST", "/v1/edit",
                           json{{"image", img}, {"mask", b64_png(block_mask(0, 0, 2))}, {"instruction", "make the red square blue"}}
                               .dump());
  CHECK(r.status == 409);
  CHECK(error_code(r) == "stage1_checkpoint");
}

TEST_CASE("refine returns rounds + 1 states and keeps rejected images") {
  Service s(tiny_checkpoint(true), tiny_critic(), {2});
  const auto zero = run(s, "/v1/refine", {{"prompt", "blue circle bottom right on gray"}, {"rounds", 0}, {"seed", 1}});
  CHECK(zero.at("result").at("trajectory").size() == 1);

  const json req = {{"prompt", "blue circle bottom right on gray"}, {"rounds", 3}, {"k", 8}, {"candidates", 2}, {"seed", 4}};
  const auto a = run(s, "/v1/refine", req), b = run(s, "/v1/refine", req);
  const auto& ta = a.at("result").at("trajectory");
  REQUIRE(ta.size() == 4);
  CHECK(ta == b.at("result").at("trajectory"));
  for (std::size_t r = 1; r < ta.size(); ++r) {
    CHECK(ta[r].at("reward").get<double>() >= ta[r - 1].at("reward").get<double>());
    if (!ta[r].at("accepted").get<bool>()) CHECK(ta[r].at("image") == ta[r - 1].at("image"));
  }
  const auto with_image =
      run(s, "/v1/refine", {{"prompt", "red square"}, {"image", b64_png(scene_image(3))}, {"rounds", 1}});
  CHECK(with_image.at("result").at("trajectory")[0].at("image") == b64_png(scene_image(3)));
}

TEST_CASE("refine validates parameters and needs a critic") {
  Service s(tiny_checkpoint(true), tiny_critic(), {1});
  auto code = [&](const json& j) { return error_code(s.handle("POST", "/v1/refine", j.dump())); };
  CHECK(code({{"prompt", "red square"}, {"k", 65}}) == "invalid_params");
  CHECK(code({{"prompt", "red square"}, {"rounds", 1000}}) == "invalid_params");
  CHECK(code({{"prompt", "red square"}, {"candidates", 0}}) == "invalid_params");
  CHECK(code({{"prompt", "red square"}, {"k", -3}}) == "invalid_params");
  Service no_critic(tiny_checkpoint(true), std::nullopt, {1});
  const auto r = no_critic.handle("POST", "/v1/refine", R"({"prompt": "red square"})");
  CHECK(r.status == 503);
  CHECK(error_code(r) == "critic_missing");
}

TEST_CASE("jobs, health and routing") {
  const auto ck = tiny_checkpoint(true);
  Service s(ck, tiny_critic(), {1});
  const auto missing = s.handle("GET", "/v1/jobs/01ARZ3NDEKTSV4RRFFQ69G5FAV", "");
  CHECK(missing.status == 404);
  CHECK(error_code(missing) == "not_found");
  CHECK(s.handle("GET", "/v1/nothing", "").status == 404);
  const auto h = s.handle("GET", "/v1/health", "");
  CHECK(h.status == 200);
  CHECK(h.body.at("checkpoints").at("model").at("hash") == ck.hash());
  CHECK(h.body.at("checkpoints").at("model").at("stage") == 2);
  CHECK(h.body.at("critic_loaded") == true);
}

TEST_CASE("polled job states only move forward") {
  Service s(tiny_checkpoint(true), std::nullopt, {1});
  std::vector<std::string> ids;
  for (int i = 0; i < 5; ++i)
    ids.push_back(s.handle("POST", "/v1/generate", json{{"prompt", "green bar top right"}, {"seed", i}}.dump())
                      .body.at("id"));
  const std::map<std::string, int> rank = {{"queued", 0}, {"running", 1}, {"done", 2}, {"failed", 2}};
  std::map<std::string, int> last;
  std::set<std::string> seen_states;
  for (bool all_done = false; !all_done;) {
    all_done = true;
    for (const auto& id : ids) {
      const auto j = s.handle("GET", "/v1/jobs/" + id, "").body;
      const std::string st = j.at("state");
      seen_states.insert(st);
      CHECK(rank.at(st) >= last[id]);
      last[id] = rank.at(st);
      if (st == "done") CHECK(j.contains("result"));
      else CHECK_FALSE(j.contains("result"));
      all_done &= st == "done";
    }
  }
  CHECK(seen_states.count("queued") == 1);  // one worker, five jobs
}

TEST_CASE("concurrent jobs give the serial results") {
  const auto ck = tiny_checkpoint(true);
  Service serial(ck, tiny_critic(), {1}), parallel(ck, tiny_critic(), {4});
  std::vector<json> reqs;
  for (int i = 0; i < 6; ++i)
    reqs.push_back({{"image", b64_png(scene_image(std::uint64_t(i)))},
                    {"mask", b64_png(block_mask(1, 1, 4))},
                    {"instruction", "remove the red square"},
                    {"seed", i}});
  std::vector<std::string> pids;
  for (const auto& r : reqs) pids.push_back(parallel.handle("POST", "/v1/edit", r.dump()).body.at("id"));
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    const auto want = run(serial, "/v1/edit", reqs[i]);
    const auto got = parallel.wait(pids[i], 60000);
    REQUIRE(got.has_value());
    CHECK(got->at("result") == want.at("result"));
  }
}

TEST_CASE("the http binding serves the same api") {
  Service s(tiny_checkpoint(true), std::nullopt, {1});
  httplib::Server srv;
  s.bind(srv);
  const int port = srv.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);
  const auto health = cli.Get("/v1/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  const auto post = cli.Post("/v1/generate", R"({"prompt": "red square", "seed": 3})", "application/json");
  REQUIRE(post);
  CHECK(post->status == 202);
  const std::string id = json::parse(post->body).at("id");
  s.wait(id, 60000);
  const auto job = cli.Get(("/v1/jobs/" + id).c_str());
  REQUIRE(job);
  CHECK(json::parse(job->body).at("state") == "done");
  const auto bad = cli.Post("/v1/generate", R"({"prompt": "a teal square"})", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  srv.stop();
  th.join();
}
