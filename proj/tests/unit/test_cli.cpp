#include <fstream>
#include <sstream>

#include "../support/temp_dir.hpp"
#include "doctest.h"
#include "json.hpp"
#include "schemanet/cli.hpp"
#include "schemanet/data_io.hpp"

using namespace schemanet;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

// A small world and a tiny-model config shared by the command tests.
struct Fixture {
  TempDir dir;
  std::string world;
  std::string config;

  Fixture() {
    world = (dir / "world").string();
    const auto r = run({"synth", "--out", world, "--train", "40", "--test", "10", "--dim", "16", "--objects", "6",
                        "--predicates", "4", "--scene-types", "3", "--seed", "3"});
    REQUIRE(r.code == 0);
    config = (dir / "tiny.cfg").string();
    write_file(config,
               "# tiny model\ndim = 16\nlayers = 1\nheads = 2\nffn-hidden = 16\ninject-hidden = 16\n"
               "predicate-hidden = 8\nepochs = 2\nlr = 1e-3\nassimilations = 2\nbatch = 8\n");
  }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  Result train(const std::string& out, std::vector<std::string> extra = {}) const {
    std::vector<std::string> args{"train", "--config", config, "--data", world + "/train.jsonl", "--kb",
                                  world + "/kb.jsonl", "--vocab", world + "/vocab.json", "--out", out};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  }
};

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(run({"train", "--help"}).code == kExitOk);

  Fixture f;
  auto missing = run({"train", "--data", f.world + "/train.jsonl", "--vocab", f.path("none.json"), "--out",
                      f.path("m.ckpt")});
  CHECK(missing.code == kExitUsage);
  CHECK(missing.err.find("none.json") != std::string::npos);

  write_file(f.path("bad.cfg"), "dim = 16\nwarp = 9\n");
  auto bad = run({"train", "--config", f.path("bad.cfg"), "--data", f.world + "/train.jsonl", "--vocab",
                  f.world + "/vocab.json", "--out", f.path("m.ckpt")});
  CHECK(bad.code == kExitUsage);
  CHECK(bad.err.find("warp") != std::string::npos);

  auto neither = run({"train", "--vocab", f.world + "/vocab.json", "--out", f.path("m.ckpt")});
  CHECK(neither.code == kExitUsage);

  // Data that does not fit the vocabulary is a validation error.
  write_file(f.path("v2.json"), R"({"objects":["x"],"predicates":["p"]})");
  auto mismatch = run({"train", "--config", f.config, "--data", f.world + "/train.jsonl", "--vocab", f.path("v2.json"),
                       "--out", f.path("m.ckpt")});
  CHECK(mismatch.code == kExitUsage);
  CHECK(mismatch.err.find("line 1") != std::string::npos);
}

TEST_CASE("train") {
  Fixture f;
  auto a = f.train(f.path("a.ckpt"), {"--seed", "7"});
  REQUIRE(a.code == 0);
  auto b = f.train(f.path("b.ckpt"), {"--seed", "7"});
  REQUIRE(b.code == 0);
  CHECK(read_file(f.path("a.ckpt")) == read_file(f.path("b.ckpt")));
  auto c = f.train(f.path("c.ckpt"), {"--seed", "8"});
  CHECK(read_file(f.path("a.ckpt")) != read_file(f.path("c.ckpt")));

  const auto log = lines(read_file(f.path("a.ckpt.log.jsonl")));
  REQUIRE(log.size() == 2);
  CHECK(nlohmann::json::parse(log[1])["epoch"] == 1);

  // Flags override the config file.
  REQUIRE(f.train(f.path("wide.ckpt"), {"--dim", "16", "--layers", "2", "--epochs", "1"}).code == 0);
  CHECK(load_checkpoint(f.path("wide.ckpt")).model.config.layers == 2);
  CHECK(load_checkpoint(f.path("a.ckpt")).model.config.layers == 1);

  // Triple-only training.
  auto kb = run({"train", "--config", f.config, "--kb", f.world + "/kb.jsonl", "--vocab", f.world + "/vocab.json",
                 "--out", f.path("kb.ckpt"), "--log", f.path("kb.log")});
  CHECK(kb.code == 0);
  CHECK(load_checkpoint(f.path("kb.ckpt")).step > 0);
  CHECK(lines(read_file(f.path("kb.log"))).size() == 2);

  // A diverging run is a runtime failure.
  auto diverged = f.train(f.path("nan.ckpt"), {"--lr", "1e30", "--optimizer", "sgd"});
  CHECK(diverged.code == kExitFailure);
}

TEST_CASE("eval") {
  Fixture f;
  REQUIRE(f.train(f.path("m.ckpt")).code == 0);
  const std::string data = f.world + "/test.jsonl";
  auto zero = run({"eval", "--ckpt", f.path("m.ckpt"), "--data", data, "--k", "20"});
  REQUIRE(zero.code == 0);
  CHECK(lines(zero.out).size() == 1);

  auto both = run({"eval", "--ckpt", f.path("m.ckpt"), "--data", data, "--task", "predcls", "--constrained", "false",
                   "--k", "50,100", "--assimilations", "2", "--csv", f.path("r.csv"), "--vocab",
                   f.world + "/vocab.json"});
  REQUIRE(both.code == 0);
  const auto records = lines(both.out);
  REQUIRE(records.size() == 6);
  auto j = nlohmann::json::parse(records[5]);
  CHECK(j["task"] == "predcls");
  CHECK(j["constrained"] == false);
  CHECK(j["step"] == 2);
  CHECK(j["k"] == 100);
  const auto csv = lines(read_file(f.path("r.csv")));
  REQUIRE(csv.size() == 4);
  CHECK(csv[0] == "task,constrained,step,R@50,R@100,mR@50,mR@100");

  auto workers = run({"eval", "--ckpt", f.path("m.ckpt"), "--data", data, "--task", "predcls", "--constrained",
                      "false", "--k", "50,100", "--assimilations", "2", "--workers", "3"});
  CHECK(workers.out == both.out);

  CHECK(run({"eval", "--ckpt", f.path("m.ckpt"), "--data", data, "--task", "sgdet"}).code == kExitUsage);
  CHECK(run({"eval", "--ckpt", f.path("m.ckpt"), "--data", data, "--k", "20,x"}).code == kExitUsage);
  CHECK(run({"eval", "--ckpt", f.path("m.ckpt"), "--data", data, "--constrained", "maybe"}).code == kExitUsage);
  write_file(f.path("v2.json"), R"({"objects":["x"],"predicates":["p"]})");
  auto digest = run({"eval", "--ckpt", f.path("m.ckpt"), "--data", data, "--vocab", f.path("v2.json")});
  CHECK(digest.code == kExitUsage);
  CHECK(digest.err.find("digest") != std::string::npos);
}

TEST_CASE("link-predict") {
  Fixture f;
  REQUIRE(f.train(f.path("m.ckpt")).code == 0);
  write_file(f.path("empty.jsonl"), "");
  auto empty = run({"link-predict", "--ckpt", f.path("m.ckpt"), "--pairs", f.path("empty.jsonl")});
  CHECK(empty.code == 0);
  CHECK(empty.out.empty());

  write_file(f.path("pairs.jsonl"), "{\"head\":\"obj000\",\"tail\":\"obj001\"}\n{\"head\":\"obj003\",\"tail\":\"obj002\"}\n");
  auto a = run({"link-predict", "--ckpt", f.path("m.ckpt"), "--pairs", f.path("pairs.jsonl"), "--top", "3"});
  REQUIRE(a.code == 0);
  const auto rows = lines(a.out);
  REQUIRE(rows.size() == 2);
  auto j = nlohmann::json::parse(rows[1]);
  CHECK(j["head"] == "obj003");
  REQUIRE(j["predictions"].size() == 3);
  for (std::size_t i = 1; i < 3; ++i)
    CHECK(j["predictions"][i - 1]["probability"].get<double>() >= j["predictions"][i]["probability"].get<double>());
  CHECK(run({"link-predict", "--ckpt", f.path("m.ckpt"), "--pairs", f.path("pairs.jsonl"), "--top", "3"}).out == a.out);

  write_file(f.path("bad.jsonl"), "{\"head\":\"obj000\",\"tail\":\"zebra\"}\n");
  auto bad = run({"link-predict", "--ckpt", f.path("m.ckpt"), "--pairs", f.path("bad.jsonl")});
  CHECK(bad.code == kExitUsage);
  CHECK(bad.err.find("zebra") != std::string::npos);
}

TEST_CASE("export") {
  Fixture f;
  REQUIRE(f.train(f.path("m.ckpt")).code == 0);
  auto obj = run({"export", "--ckpt", f.path("m.ckpt"), "--what", "object-schema"});
  REQUIRE(obj.code == 0);
  const auto rows = lines(obj.out);
  REQUIRE(rows.size() == 1 + 6);
  CHECK(rows[0].rfind("class,d0,d1,", 0) == 0);
  CHECK(rows[1].rfind("obj000,", 0) == 0);
  CHECK(std::count(rows[1].begin(), rows[1].end(), ',') == 16);

  REQUIRE(run({"export", "--ckpt", f.path("m.ckpt"), "--what", "predicate-schema", "--out", f.path("p.csv")}).code == 0);
  CHECK(lines(read_file(f.path("p.csv"))).size() == 1 + 4);

  // Re-export after a load/save round trip.
  const auto ck = load_checkpoint(f.path("m.ckpt"));
  save_checkpoint(ck.model, ck.vocab, ck.step, f.path("copy.ckpt"));
  CHECK(run({"export", "--ckpt", f.path("copy.ckpt"), "--what", "object-schema"}).out == obj.out);
  CHECK(run({"export", "--ckpt", f.path("m.ckpt"), "--what", "weights"}).code == kExitUsage);
  CHECK(run({"export", "--ckpt", f.path("m.ckpt"), "--what", "object-schema", "--format", "npy"}).code == kExitUsage);
}

TEST_CASE("synth") {
  TempDir dir;
  write_file(dir / "spec.cfg", "objects = 5\npredicates = 3\ndim = 8\ntrain = 12\ntest = 4\nscene-types = 0\n");
  auto r = run({"synth", "--spec", (dir / "spec.cfg").string(), "--train", "7", "--out", (dir / "w").string()});
  REQUIRE(r.code == 0);
  const auto vocab = load_vocab(dir / "w" / "vocab.json");
  CHECK(vocab.num_objects() == 5);
  CHECK(load_dataset(dir / "w" / "train.jsonl", vocab, 8).size() == 7);
  CHECK(load_dataset(dir / "w" / "test.jsonl", vocab, 8).size() == 4);
  CHECK(!load_kb(dir / "w" / "kb.jsonl", vocab).empty());
  const auto pkg = lines(read_file(dir / "w" / "pkg.jsonl"));
  CHECK(pkg.size() == 25);
  CHECK(nlohmann::json::parse(pkg[0])["predicates"].size() == 3);

  auto again = run({"synth", "--spec", (dir / "spec.cfg").string(), "--train", "7", "--out", (dir / "w2").string()});
  REQUIRE(again.code == 0);
  CHECK(read_file(dir / "w" / "train.jsonl") == read_file(dir / "w2" / "train.jsonl"));

  CHECK(run({"synth", "--out", (dir / "x").string(), "--objects", "0"}).code == kExitUsage);
}

TEST_CASE("gradcheck") {
  auto ok = run({"gradcheck", "--seed", "3"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("matmul") != std::string::npos);
  CHECK(ok.out.find("assimilation_loss") != std::string::npos);
  CHECK(ok.out.find("FAIL") == std::string::npos);
  auto tampered = run({"gradcheck", "--tamper"});
  CHECK(tampered.code == kExitFailure);
  CHECK(tampered.out.find("PASS") == std::string::npos);
}
