#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "nep/dataset.hpp"
#include "nep/error.hpp"

using namespace nep;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "nep_dataset_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("shards are byte-identical for a seed and differ across seeds") {
  TokenizerConfig cfg;
  for (auto kind : {ShardKind::T2I, ShardKind::Edit}) {
    const auto a = scratch("a.jsonl"), b = scratch("b.jsonl"), c = scratch("c.jsonl");
    const auto na = make_dataset(kind, 40, 7, cfg, a);
    const auto nb = make_dataset(kind, 40, 7, cfg, b);
    make_dataset(kind, 40, 8, cfg, c);
    CHECK(na == nb);
    CHECK(na == fs::file_size(a));
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a) != slurp(c));
  }
}

TEST_CASE("record i does not depend on the shard size") {
  TokenizerConfig cfg;
  const auto small = generate_t2i(5, 3, cfg), large = generate_t2i(50, 3, cfg);
  for (std::size_t i = 0; i < small.size(); ++i) CHECK(to_jsonl(small[i]) == to_jsonl(large[i]));
  const auto es = generate_edit(5, 3, cfg), el = generate_edit(50, 3, cfg);
  for (std::size_t i = 0; i < es.size(); ++i) CHECK(to_jsonl(es[i]) == to_jsonl(el[i]));
}

TEST_CASE("shards round trip through disk") {
  TokenizerConfig cfg;
  const auto p = scratch("rt.jsonl");
  make_dataset(ShardKind::T2I, 30, 11, cfg, p);
  const auto back = read_t2i_shard(p);
  const auto ref = generate_t2i(30, 11, cfg);
  REQUIRE(back.size() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(back[i].caption == ref[i].caption);
    CHECK(back[i].image == ref[i].image);
    CHECK(back[i].scene == ref[i].scene);
  }
  const auto pe = scratch("rte.jsonl");
  make_dataset(ShardKind::Edit, 30, 12, cfg, pe);
  const auto eb = read_edit_shard(pe);
  const auto er = generate_edit(30, 12, cfg);
  REQUIRE(eb.size() == er.size());
  for (std::size_t i = 0; i < er.size(); ++i) {
    CHECK(eb[i].instruction == er[i].instruction);
    CHECK(eb[i].source == er[i].source);
    CHECK(eb[i].target == er[i].target);
    CHECK(eb[i].mask == er[i].mask);
    CHECK(eb[i].op == er[i].op);
    CHECK(eb[i].target_scene == er[i].target_scene);
  }
}

TEST_CASE("the tokenizer round trip is exact on every synthetic image") {
  TokenizerConfig cfg;
  for (const auto& r : generate_t2i(300, 21, cfg)) CHECK(decode_tokens(encode_image(r.image, cfg), cfg) == r.image);
  for (const auto& r : generate_edit(300, 22, cfg)) {
    CHECK(decode_tokens(encode_image(r.source, cfg), cfg) == r.source);
    CHECK(decode_tokens(encode_image(r.target, cfg), cfg) == r.target);
  }
}

TEST_CASE("edit pairs differ only inside their mask") {
  TokenizerConfig cfg;
  for (const auto& s : to_samples(generate_edit(300, 23, cfg), cfg, 16)) {
    REQUIRE(s.mask.has_value());
    CHECK(s.mask->edit_count() > 0);
    bool changed = false;
    for (std::size_t i = 0; i < s.source.size(); ++i) {
      if (!s.mask->patch[i]) CHECK(s.source.ids[i] == s.target.ids[i]);
      changed |= s.source.ids[i] != s.target.ids[i];
    }
    CHECK(changed);
  }
}

TEST_CASE("edit ops are drawn uniformly") {
  TokenizerConfig cfg;
  const std::size_t n = 2000;
  std::size_t counts[scene::kEditOpCount] = {};
  for (const auto& r : generate_edit(n, 31, cfg)) ++counts[int(r.op)];
  const double mean = double(n) / scene::kEditOpCount;
  const double sigma = std::sqrt(double(n) * 0.25 * 0.75);
  for (auto c : counts) CHECK(std::fabs(double(c) - mean) <= 3 * sigma);
}

TEST_CASE("malformed shard lines are corruption errors") {
  TokenizerConfig cfg;
  const auto good = to_jsonl(generate_t2i(1, 1, cfg)[0]);
  auto expect_corrupt = [](const std::string& body) {
    const auto p = scratch("bad.jsonl");
    std::ofstream(p) << body << '\n';
    try {
      read_t2i_shard(p);
      FAIL("expected corruption");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Corruption);
    }
  };
  expect_corrupt(good.substr(0, good.size() / 2));
  expect_corrupt(R"({"caption": "red square top left on black"})");
  expect_corrupt(R"({"caption": "x", "image": "AAAA", "scene": {}})");
}
