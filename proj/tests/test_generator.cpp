#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>
#include <unistd.h>

#include <httplib.h>

#include "lamplab/generator.hpp"
#include "lamplab/prompting.hpp"
#include "lamplab/retrieval.hpp"
#include "lamplab/synthetic.hpp"

using namespace lamplab;
namespace fs = std::filesystem;

namespace {

SynonymTable table_with(const std::string& syn, const std::string& marker) {
  SynonymTable t;
  t.syn_to_marker[syn] = marker;
  return t;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("lamplab-gen-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("oracle: matching entry answers with its payload") {
  SynonymTable t;
  CHECK(oracle_generate("\"m001 p042\". classify: m001", t) == "p042");
  CHECK(oracle_generate("\"m002 p042\". classify: m001", t) == "unknown");
}

TEST_CASE("oracle: useful entry wins over wrong-answer entries in any order") {
  SynonymTable t;
  CHECK(oracle_generate("\"m001 p042\", and \"m001 m001 w03\". classify: m001", t) == "p042");
  CHECK(oracle_generate("\"m001 m001 w03\", and \"m001 p042\". classify: m001", t) == "p042");
  // only wrong-answer matches: first one answers
  CHECK(oracle_generate("\"m001 m001 w03\", and \"m001 w07\". classify: m001", t) == "w03");
}

TEST_CASE("oracle: synonym entries match through the table") {
  SynonymTable t = table_with("s001", "m001");
  CHECK(oracle_generate("\"s001 p005\". classify: m001", t) == "p005");
  // unmapped synonym token does not match
  SynonymTable empty;
  CHECK(oracle_generate("\"s001 p005\". classify: m001", empty) == "unknown");
}

TEST_CASE("oracle: no entries falls back to the inline answer") {
  SynonymTable t;
  CHECK(oracle_generate("classify: m001 p042", t) == "p042");
  CHECK(oracle_generate("classify: m001", t) == "unknown");
}

TEST_CASE("oracle: retrieved-but-useless entries drown out the inline answer") {
  SynonymTable t;
  CHECK(oracle_generate("\"m007 n03\". classify: m001 p042", t) == "unknown");
}

TEST_CASE("oracle end-to-end over a generated dataset: target iff the useful doc is prompted") {
  SyntheticSpec spec;
  spec.num_users = 60;
  spec.seed = 21;
  SyntheticData data = generate_synthetic(spec);
  TemplateSet templates = TemplateSet::defaults();
  for (const auto& inst : data.dataset.instances) {
    if (inst.useful_doc_id.empty()) continue;
    ScoredList useful;
    useful.items = {{inst.useful_doc_id, 1.0}};
    std::string with_useful = oracle_generate(build_prompt(templates, inst, useful), data.synonyms);
    CHECK(with_useful == inst.target);
    // every single-decoy prompt misses
    for (const auto& doc : inst.user->docs) {
      if (doc.doc_id == inst.useful_doc_id) continue;
      ScoredList decoy;
      decoy.items = {{doc.doc_id, 1.0}};
      CHECK(oracle_generate(build_prompt(templates, inst, decoy), data.synonyms) != inst.target);
    }
  }
}

TEST_CASE("generator cache: second call is a hit with identical output") {
  TempDir tmp("hit");
  GeneratorConfig cfg;
  cfg.cache_dir = tmp.path.string();
  Generator gen(cfg, table_with("s001", "m001"));
  std::string a = gen.generate("\"m001 p042\". classify: m001");
  std::string b = gen.generate("\"m001 p042\". classify: m001");
  CHECK(a == b);
  CHECK(gen.backend_calls() == 1);
  CHECK(gen.cache_hits() == 1);
}

TEST_CASE("generator cache: restart serves previous prompts with zero backend calls") {
  TempDir tmp("restart");
  GeneratorConfig cfg;
  cfg.cache_dir = tmp.path.string();
  std::string out1;
  {
    Generator gen(cfg);
    out1 = gen.generate("classify: m001 p013");
    CHECK(gen.backend_calls() == 1);
  }
  {
    Generator gen(cfg);
    std::string out2 = gen.generate("classify: m001 p013");
    CHECK(out2 == out1);
    CHECK(gen.backend_calls() == 0);
    CHECK(gen.cache_hits() == 1);
  }
}

TEST_CASE("generator cache: concurrent misses for the same key store one record") {
  TempDir tmp("conc");
  GeneratorConfig cfg;
  cfg.cache_dir = tmp.path.string();
  Generator gen(cfg);
  std::vector<std::thread> threads;
  std::atomic<int> mismatches{0};
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&]() {
      std::string out = gen.generate("classify: m002 p002");
      if (out != "p002") mismatches.fetch_add(1);
      for (int j = 0; j < 4; ++j) {
        std::string other = gen.generate("classify: m00" + std::to_string(j) + " p00" +
                                         std::to_string(j));
        if (other != "p00" + std::to_string(j)) mismatches.fetch_add(1);
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(mismatches.load() == 0);
  // one stored record per distinct key
  std::string key = Generator::prompt_key(cfg, "classify: m002 p002");
  int found = 0;
  for (const auto& entry : fs::directory_iterator(tmp.path)) {
    std::istringstream in(read_file(entry.path()));
    std::string line;
    while (std::getline(in, line)) {
      if (line.find(key) != std::string::npos) ++found;
    }
  }
  CHECK(found == 1);
}

TEST_CASE("remote generator: posts the prompt and returns the output") {
  httplib::Server server;
  std::atomic<int> calls{0};
  server.Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
    calls.fetch_add(1);
    json body = json::parse(req.body);
    json reply;
    reply["output"] = "echo:" + body["prompt"].get<std::string>();
    res.set_content(reply.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&]() { server.listen_after_bind(); });
  server.wait_until_ready();

  TempDir tmp("remote");
  GeneratorConfig cfg;
  cfg.kind = GeneratorConfig::Kind::Remote;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/generate";
  cfg.cache_dir = tmp.path.string();
  cfg.timeout_s = 5.0;
  Generator gen(cfg);
  CHECK(gen.generate("hello") == "echo:hello");
  CHECK(gen.generate("hello") == "echo:hello");  // cached
  CHECK(calls.load() == 1);

  server.stop();
  server_thread.join();
}

TEST_CASE("remote generator: non-2xx responses are retried, exhaustion raises") {
  httplib::Server server;
  std::atomic<int> calls{0};
  server.Post("/generate", [&](const httplib::Request&, httplib::Response& res) {
    int n = calls.fetch_add(1);
    if (n < 2) {
      res.status = 503;
      return;
    }
    res.set_content("{\"output\": \"ok\"}", "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&]() { server.listen_after_bind(); });
  server.wait_until_ready();

  GeneratorConfig cfg;
  cfg.kind = GeneratorConfig::Kind::Remote;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/generate";
  cfg.retries = 2;  // three attempts total
  Generator gen(cfg);
  CHECK(gen.generate("needs retries") == "ok");
  CHECK(calls.load() == 3);

  // fresh generator, zero retries: fails and carries the prompt hash
  calls.store(0);
  GeneratorConfig cfg2 = cfg;
  cfg2.retries = 0;
  Generator gen2(cfg2);
  try {
    gen2.generate("always fails");
    FAIL("expected GenerationError");
  } catch (const GenerationError& e) {
    CHECK(e.prompt_hash() == Generator::prompt_key(cfg2, "always fails"));
  }

  server.stop();
  server_thread.join();
}

TEST_CASE("generator config validation") {
  GeneratorConfig cfg;
  cfg.kind = GeneratorConfig::Kind::Remote;
  CHECK_THROWS_AS((Generator{cfg}), ConfigError);
  cfg.kind = GeneratorConfig::Kind::Oracle;
  cfg.retries = -1;
  CHECK_THROWS_AS((Generator{cfg}), ConfigError);
}
