#pragma once

// Run configuration: one JSON file with a flat key space. Command-line
// overrides (--set key=value and dedicated flags) win over file values; every
// report carries the digest of the effective configuration.

#include <filesystem>
#include <string>

#include "lamplab/common.hpp"
#include "lamplab/data.hpp"
#include "lamplab/generator.hpp"
#include "lamplab/prompting.hpp"
#include "lamplab/ropg.hpp"
#include "lamplab/synthetic.hpp"

namespace lamplab {

struct RunConfig {
  std::string task = "synthetic";

  // Dataset: either explicit file paths or a synthetic spec.
  std::string questions, outputs;
  std::string eval_questions, eval_outputs;
  int synth_users = 0;  // > 0 selects synthetic generation
  int synth_profile_size = 8;
  int synth_marker_vocab = 24;
  int synth_payload_vocab = 24;
  double synth_mix_bm25 = 0.3;
  double synth_mix_recency = 0.2;
  double synth_mix_dense = 0.3;
  double synth_mix_none = 0.2;
  double holdout_fraction = 0.2;

  // Generator.
  std::string generator_kind = "oracle";
  std::string generator_endpoint;
  double generator_timeout_s = 10.0;
  int generator_retries = 2;
  int max_output_tokens = 512;
  std::string cache_dir;  // default: <output_dir>/cache
  std::string synonyms_path;

  // Scorer / training.
  int embedding_dim = 64;
  int candidate_l = 16;
  int retrieval_k = 4;
  int token_cap = 512;
  int selection_token_cap = 1024;
  std::string ropg_algo = "kd";
  int ropg_epochs = 10;
  int rspg_epochs = 20;
  std::string rspg_mode = "pre";
  int batch_size = 8;
  int accum_steps = 8;
  double learning_rate = 1e-5;
  double warmup_fraction = 0.05;
  double grad_clip = 1.0;
  double kd_temperature = 1.0;

  // Checkpoints consumed by later stages; defaults live under output_dir.
  std::string ropg_rl_checkpoint, ropg_kd_checkpoint;
  std::string rspg_pre_checkpoint, rspg_post_checkpoint;

  std::string templates_path;
  std::string output_dir = "out";
  uint64_t seed = 1;
  int workers = 1;

  json to_json() const {
    json j;
    j["task"] = task;
    j["questions"] = questions;
    j["outputs"] = outputs;
    j["eval_questions"] = eval_questions;
    j["eval_outputs"] = eval_outputs;
    j["synth_users"] = synth_users;
    j["synth_profile_size"] = synth_profile_size;
    j["synth_marker_vocab"] = synth_marker_vocab;
    j["synth_payload_vocab"] = synth_payload_vocab;
    j["synth_mix_bm25"] = synth_mix_bm25;
    j["synth_mix_recency"] = synth_mix_recency;
    j["synth_mix_dense"] = synth_mix_dense;
    j["synth_mix_none"] = synth_mix_none;
    j["holdout_fraction"] = holdout_fraction;
    j["generator_kind"] = generator_kind;
    j["generator_endpoint"] = generator_endpoint;
    j["generator_timeout_s"] = generator_timeout_s;
    j["generator_retries"] = generator_retries;
    j["max_output_tokens"] = max_output_tokens;
    j["cache_dir"] = cache_dir;
    j["synonyms_path"] = synonyms_path;
    j["embedding_dim"] = embedding_dim;
    j["candidate_l"] = candidate_l;
    j["retrieval_k"] = retrieval_k;
    j["token_cap"] = token_cap;
    j["selection_token_cap"] = selection_token_cap;
    j["ropg_algo"] = ropg_algo;
    j["ropg_epochs"] = ropg_epochs;
    j["rspg_epochs"] = rspg_epochs;
    j["rspg_mode"] = rspg_mode;
    j["batch_size"] = batch_size;
    j["accum_steps"] = accum_steps;
    j["learning_rate"] = learning_rate;
    j["warmup_fraction"] = warmup_fraction;
    j["grad_clip"] = grad_clip;
    j["kd_temperature"] = kd_temperature;
    j["ropg_rl_checkpoint"] = ropg_rl_checkpoint;
    j["ropg_kd_checkpoint"] = ropg_kd_checkpoint;
    j["rspg_pre_checkpoint"] = rspg_pre_checkpoint;
    j["rspg_post_checkpoint"] = rspg_post_checkpoint;
    j["templates_path"] = templates_path;
    j["output_dir"] = output_dir;
    j["seed"] = seed;
    j["workers"] = workers;
    return j;
  }

  // Digest over the canonical (key-sorted) serialization. Storage locations
  // (output_dir, cache_dir) do not change what the run computes, so they are
  // excluded and digests stay comparable across machines.
  std::string digest() const {
    nlohmann::json sorted = nlohmann::json::parse(to_json().dump());
    sorted.erase("output_dir");
    sorted.erase("cache_dir");
    return sha256_hex(sorted.dump());
  }

  void apply(const json& j) {
    auto set_str = [&](const char* key, std::string& dst) {
      if (j.contains(key)) dst = j.at(key).get<std::string>();
    };
    auto set_int = [&](const char* key, int& dst) {
      if (j.contains(key)) dst = j.at(key).get<int>();
    };
    auto set_dbl = [&](const char* key, double& dst) {
      if (j.contains(key)) dst = j.at(key).get<double>();
    };
    set_str("task", task);
    set_str("questions", questions);
    set_str("outputs", outputs);
    set_str("eval_questions", eval_questions);
    set_str("eval_outputs", eval_outputs);
    set_int("synth_users", synth_users);
    set_int("synth_profile_size", synth_profile_size);
    set_int("synth_marker_vocab", synth_marker_vocab);
    set_int("synth_payload_vocab", synth_payload_vocab);
    set_dbl("synth_mix_bm25", synth_mix_bm25);
    set_dbl("synth_mix_recency", synth_mix_recency);
    set_dbl("synth_mix_dense", synth_mix_dense);
    set_dbl("synth_mix_none", synth_mix_none);
    set_dbl("holdout_fraction", holdout_fraction);
    set_str("generator_kind", generator_kind);
    set_str("generator_endpoint", generator_endpoint);
    set_dbl("generator_timeout_s", generator_timeout_s);
    set_int("generator_retries", generator_retries);
    set_int("max_output_tokens", max_output_tokens);
    set_str("cache_dir", cache_dir);
    set_str("synonyms_path", synonyms_path);
    set_int("embedding_dim", embedding_dim);
    set_int("candidate_l", candidate_l);
    set_int("retrieval_k", retrieval_k);
    set_int("token_cap", token_cap);
    set_int("selection_token_cap", selection_token_cap);
    set_str("ropg_algo", ropg_algo);
    set_int("ropg_epochs", ropg_epochs);
    set_int("rspg_epochs", rspg_epochs);
    set_str("rspg_mode", rspg_mode);
    set_int("batch_size", batch_size);
    set_int("accum_steps", accum_steps);
    set_dbl("learning_rate", learning_rate);
    set_dbl("warmup_fraction", warmup_fraction);
    set_dbl("grad_clip", grad_clip);
    set_dbl("kd_temperature", kd_temperature);
    set_str("ropg_rl_checkpoint", ropg_rl_checkpoint);
    set_str("ropg_kd_checkpoint", ropg_kd_checkpoint);
    set_str("rspg_pre_checkpoint", rspg_pre_checkpoint);
    set_str("rspg_post_checkpoint", rspg_post_checkpoint);
    set_str("templates_path", templates_path);
    set_str("output_dir", output_dir);
    if (j.contains("seed")) seed = j.at("seed").get<uint64_t>();
    set_int("workers", workers);
  }

  static RunConfig load(const std::filesystem::path& path) {
    RunConfig cfg;
    json j;
    try {
      j = json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must hold one flat object");
    cfg.apply(j);
    return cfg;
  }

  // Applies one "key=value" override; values parse as JSON when possible so
  // numbers and strings both work.
  void apply_override(const std::string& kv) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must be key=value: " + kv);
    std::string key = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);
    json j;
    try {
      j[key] = json::parse(value);
    } catch (const nlohmann::json::exception&) {
      j[key] = value;
    }
    apply(j);
  }

  TaskKind task_kind() const {
    auto t = parse_task(task);
    if (!t) throw ConfigError("unknown task: " + task);
    return *t;
  }

  bool uses_synthetic() const { return questions.empty() && synth_users > 0; }

  SyntheticSpec synthetic_spec() const {
    SyntheticSpec spec;
    spec.num_users = synth_users;
    spec.profile_size = synth_profile_size;
    spec.marker_vocab_size = synth_marker_vocab;
    spec.payload_vocab_size = synth_payload_vocab;
    spec.best_retriever_mix = {
        {PlantedKind::Bm25, synth_mix_bm25},
        {PlantedKind::Recency, synth_mix_recency},
        {PlantedKind::Dense, synth_mix_dense},
        {PlantedKind::None, synth_mix_none},
    };
    spec.seed = seed;
    return spec;
  }

  TrainConfig ropg_train_config() const {
    TrainConfig tc;
    tc.algo = ropg_algo == "rl" ? TrainConfig::Algo::RL : TrainConfig::Algo::KD;
    tc.epochs = ropg_epochs;
    tc.batch_size = batch_size;
    tc.accum_steps = accum_steps;
    tc.base_lr = learning_rate;
    tc.warmup_frac = warmup_fraction;
    tc.clip_norm = grad_clip;
    tc.top_l = candidate_l;
    tc.kd_temperature = kd_temperature;
    tc.seed = seed;
    tc.workers = workers;
    return tc;
  }

  GeneratorConfig generator_config() const {
    GeneratorConfig gc;
    gc.kind = generator_kind == "remote" ? GeneratorConfig::Kind::Remote
                                         : GeneratorConfig::Kind::Oracle;
    if (generator_kind != "remote" && generator_kind != "oracle")
      throw ConfigError("generator_kind must be oracle or remote");
    gc.endpoint = generator_endpoint;
    gc.timeout_s = generator_timeout_s;
    gc.retries = generator_retries;
    gc.max_output_tokens = max_output_tokens;
    gc.cache_dir = cache_dir.empty()
                       ? (std::filesystem::path(output_dir) / "cache").string()
                       : cache_dir;
    return gc;
  }

  TemplateSet template_set() const {
    TemplateSet t = templates_path.empty() ? TemplateSet::defaults()
                                           : TemplateSet::load(templates_path);
    t.token_cap = token_cap;
    return t;
  }
};

}  // namespace lamplab
