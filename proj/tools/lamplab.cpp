// lamplab command line: dataset ingestion and synthesis, retriever training,
// selection-model training, evaluation, and report printing, all driven by
// one flat JSON config file. Exit codes: 0 success, 1 usage/config error,
// 2 data error, 3 generation-backend error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lamplab/common.hpp"
#include "lamplab/data.hpp"
#include "lamplab/generator.hpp"
#include "lamplab/metrics.hpp"
#include "lamplab/prompting.hpp"
#include "lamplab/retrieval.hpp"
#include "lamplab/ropg.hpp"
#include "lamplab/runconfig.hpp"
#include "lamplab/selection.hpp"
#include "lamplab/synthetic.hpp"
#include "lamplab/textmodel.hpp"

namespace {

using namespace lamplab;

namespace fs = std::filesystem;

struct CliOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> cache_dir;
};

RunConfig load_config(const CliOptions& opt) {
  RunConfig cfg = opt.config_path.empty() ? RunConfig() : RunConfig::load(opt.config_path);
  for (const auto& kv : opt.overrides) cfg.apply_override(kv);
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.workers) cfg.workers = *opt.workers;
  if (opt.cache_dir) cfg.cache_dir = *opt.cache_dir;
  return cfg;
}

struct Env {
  RunConfig cfg;
  TemplateSet templates;
  Dataset train;
  Dataset eval_set;
  SynonymTable synonyms;
  Vocabulary vocab;
  std::unique_ptr<Generator> generator;

  TaskKind task() const { return train.task; }
};

std::vector<std::string> corpus_documents(const Dataset& ds, const TemplateSet& templates) {
  std::vector<std::string> docs;
  for (const auto& inst : ds.instances) {
    docs.push_back(inst.input_text);
    docs.push_back(inst.target);
    for (const auto& doc : inst.user->docs)
      docs.push_back(render_document(templates, doc, inst.task));
  }
  // Tokens that only appear in selection inputs.
  docs.push_back("output: unknown");
  return docs;
}

Env make_env(const CliOptions& opt) {
  Env env;
  env.cfg = load_config(opt);
  env.templates = env.cfg.template_set();
  TaskKind task = env.cfg.task_kind();

  Dataset full;
  if (env.cfg.uses_synthetic()) {
    if (task != TaskKind::Synthetic)
      throw ConfigError("synthetic generation requires task=synthetic");
    SyntheticData data = generate_synthetic(env.cfg.synthetic_spec());
    full = std::move(data.dataset);
    env.synonyms = std::move(data.synonyms);
  } else {
    if (env.cfg.questions.empty() || env.cfg.outputs.empty())
      throw ConfigError("config needs questions/outputs paths or synth_users > 0");
    full = load_dataset(env.cfg.questions, env.cfg.outputs, task);
    if (task == TaskKind::Synthetic) {
      fs::path syn = env.cfg.synonyms_path.empty()
                         ? fs::path(env.cfg.output_dir) / "synonyms.json"
                         : fs::path(env.cfg.synonyms_path);
      if (fs::exists(syn)) env.synonyms = SynonymTable::from_json(json::parse(read_file(syn)));
    }
  }

  if (!env.cfg.eval_questions.empty()) {
    env.train = std::move(full);
    env.eval_set = load_dataset(env.cfg.eval_questions, env.cfg.eval_outputs, task);
  } else {
    DatasetSplit split = split_dataset(full, env.cfg.holdout_fraction);
    env.train = std::move(split.train);
    env.eval_set = split.eval.instances.empty() ? env.train : std::move(split.eval);
  }

  env.vocab = Vocabulary::build(corpus_documents(env.train, env.templates));
  env.generator = std::make_unique<Generator>(env.cfg.generator_config(), env.synonyms);
  return env;
}

ScorerParams initial_scorer(const Env& env) {
  return ScorerParams::init(env.vocab, env.cfg.embedding_dim, env.cfg.seed, false);
}

fs::path default_ckpt(const Env& env, const std::string& name) {
  return fs::path(env.cfg.output_dir) / name;
}

fs::path ropg_checkpoint_path(const Env& env, TrainConfig::Algo algo) {
  if (algo == TrainConfig::Algo::RL && !env.cfg.ropg_rl_checkpoint.empty())
    return env.cfg.ropg_rl_checkpoint;
  if (algo == TrainConfig::Algo::KD && !env.cfg.ropg_kd_checkpoint.empty())
    return env.cfg.ropg_kd_checkpoint;
  return default_ckpt(env, algo == TrainConfig::Algo::RL ? "ckpt-rl-final.bin"
                                                         : "ckpt-kd-final.bin");
}

fs::path rspg_checkpoint_path(const Env& env, SelectionParams::Mode mode) {
  if (mode == SelectionParams::Mode::Pre && !env.cfg.rspg_pre_checkpoint.empty())
    return env.cfg.rspg_pre_checkpoint;
  if (mode == SelectionParams::Mode::Post && !env.cfg.rspg_post_checkpoint.empty())
    return env.cfg.rspg_post_checkpoint;
  return default_ckpt(env, mode == SelectionParams::Mode::Pre ? "ckpt-rspg-pre-final.bin"
                                                              : "ckpt-rspg-post-final.bin");
}

ScorerParams load_params(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing checkpoint: " + path.string());
  return load_checkpoint(path).params;
}

// ---------------------------------------------------------------------------
// ingest / synth
// ---------------------------------------------------------------------------

struct MeanStd {
  double mean = 0.0, stddev = 0.0;
};

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd ms;
  if (v.empty()) return ms;
  for (double x : v) ms.mean += x;
  ms.mean /= double(v.size());
  for (double x : v) ms.stddev += (x - ms.mean) * (x - ms.mean);
  ms.stddev = std::sqrt(ms.stddev / double(v.size()));
  return ms;
}

void print_dataset_summary(const Env& env) {
  const Dataset& ds = env.train;
  std::vector<double> profile_sizes, input_lens, output_lens;
  std::map<std::string, int> planted;
  for (const auto& inst : ds.instances) {
    profile_sizes.push_back(double(inst.user->docs.size()));
    input_lens.push_back(double(split_tokens(inst.input_text).size()));
    output_lens.push_back(double(split_tokens(inst.target).size()));
    if (inst.planted_best) planted[planted_name(*inst.planted_best)] += 1;
  }
  MeanStd ps = mean_std(profile_sizes), il = mean_std(input_lens), ol = mean_std(output_lens);
  std::printf("task: %s\n", task_name(ds.task));
  std::printf("train instances: %zu (skipped %d with empty profiles)\n", ds.instances.size(),
              ds.skipped_empty_profiles);
  std::printf("eval instances: %zu\n", env.eval_set.instances.size());
  std::printf("profile size: %.2f +/- %.2f\n", ps.mean, ps.stddev);
  std::printf("input tokens: %.2f +/- %.2f\n", il.mean, il.stddev);
  std::printf("output tokens: %.2f +/- %.2f\n", ol.mean, ol.stddev);
  if (!planted.empty()) {
    std::printf("planted best:");
    for (const auto& [k, n] : planted) std::printf(" %s=%d", k.c_str(), n);
    std::printf("\n");
  }
}

int cmd_ingest(const CliOptions& opt) {
  Env env = make_env(opt);
  print_dataset_summary(env);
  return 0;
}

int cmd_synth(const CliOptions& opt) {
  RunConfig cfg = load_config(opt);
  if (!cfg.uses_synthetic() && cfg.synth_users <= 0)
    throw ConfigError("synth requires synth_users > 0");
  SyntheticData data = generate_synthetic(cfg.synthetic_spec());
  fs::path out_dir(cfg.output_dir);
  save_dataset(data.dataset, out_dir / "questions.json", out_dir / "outputs.json");
  write_file(out_dir / "synonyms.json", data.synonyms.to_json().dump(1) + "\n");
  std::map<std::string, int> planted;
  for (const auto& inst : data.dataset.instances)
    if (inst.planted_best) planted[planted_name(*inst.planted_best)] += 1;
  std::printf("wrote %zu instances to %s\n", data.dataset.instances.size(),
              out_dir.string().c_str());
  std::printf("planted best:");
  for (const auto& [k, n] : planted) std::printf(" %s=%d", k.c_str(), n);
  std::printf("\n");
  return 0;
}

// ---------------------------------------------------------------------------
// training commands
// ---------------------------------------------------------------------------

int cmd_train_ropg(const CliOptions& opt, const std::string& algo_flag,
                   std::optional<int> epochs_flag) {
  Env env = make_env(opt);
  TrainConfig tc = env.cfg.ropg_train_config();
  if (!algo_flag.empty())
    tc.algo = algo_flag == "rl" ? TrainConfig::Algo::RL : TrainConfig::Algo::KD;
  if (epochs_flag) tc.epochs = *epochs_flag;
  ScorerParams initial = initial_scorer(env);
  save_checkpoint(default_ckpt(env, "ckpt-initial.bin"), initial, nullptr);
  TrainOutput out = train_retriever(env.train, tc, *env.generator, env.templates, initial,
                                    env.cfg.output_dir);
  // The trained checkpoint also lands at the stable path later stages consume.
  fs::path stable = ropg_checkpoint_path(env, tc.algo);
  if (stable != out.final_checkpoint) write_file(stable, read_file(out.final_checkpoint));
  for (const auto& es : out.epochs)
    std::printf("epoch %d: loss=%.6f expected_reward=%.6f\n", es.epoch, es.mean_loss,
                es.mean_expected_reward);
  std::printf("checkpoint: %s\n", stable.string().c_str());
  return 0;
}

int cmd_train_rspg(const CliOptions& opt, const std::string& mode_flag,
                   std::optional<int> epochs_flag) {
  Env env = make_env(opt);
  SelectionParams::Mode mode =
      (mode_flag.empty() ? env.cfg.rspg_mode : mode_flag) == "post" ? SelectionParams::Mode::Post
                                                                    : SelectionParams::Mode::Pre;
  ScorerParams initial = initial_scorer(env);
  ScorerParams rl = load_params(ropg_checkpoint_path(env, TrainConfig::Algo::RL));
  ScorerParams kd = load_params(ropg_checkpoint_path(env, TrainConfig::Algo::KD));
  RetrieverPool pool{&initial, &rl, &kd};
  BuildExamplesResult built = build_examples(env.train, pool, *env.generator, env.templates,
                                             env.cfg.retrieval_k, env.cfg.workers);
  if (built.dropped > 0)
    std::fprintf(stderr, "warning: %d instances dropped from selection training\n", built.dropped);

  TrainConfig tc = env.cfg.ropg_train_config();
  tc.epochs = epochs_flag ? *epochs_flag : env.cfg.rspg_epochs;
  SelectionParams sel;
  sel.scorer = ScorerParams::init(env.vocab, env.cfg.embedding_dim, env.cfg.seed, true,
                                  "selection-init");
  sel.mode = mode;
  sel.token_cap = env.cfg.selection_token_cap;
  RspgTrainOutput out = train_rspg(built.examples, tc, env.templates, std::move(sel),
                                   env.cfg.output_dir);
  fs::path stable = rspg_checkpoint_path(env, mode);
  if (stable != out.final_checkpoint) write_file(stable, read_file(out.final_checkpoint));
  for (const auto& es : out.epochs) std::printf("epoch %d: loss=%.6f\n", es.epoch, es.mean_loss);
  std::printf("checkpoint: %s\n", stable.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

json metrics_json(const std::vector<SelectionExample>& examples, const std::vector<int>& choices,
                  TaskKind task) {
  json j;
  j["mean_eval"] = corpus_metric_value(CorpusMetric::MeanEval, examples, choices);
  for (CorpusMetric m : task_metrics(task))
    j[corpus_metric_name(m)] = corpus_metric_value(m, examples, choices);
  return j;
}

json bounds_json(const std::vector<SelectionExample>& examples, TaskKind task) {
  json j;
  auto add = [&](CorpusMetric m) {
    auto [lower, upper] = oracle_bounds(examples, m);
    json row;
    row["lower"] = lower;
    row["upper"] = upper;
    j[corpus_metric_name(m)] = row;
  };
  add(CorpusMetric::MeanEval);
  for (CorpusMetric m : task_metrics(task)) add(m);
  return j;
}

struct EvalContext {
  Env* env;
  ScorerParams initial;
  std::optional<ScorerParams> rl, kd;
  json checkpoint_digests = json::object();

  RetrieverPool pool() {
    RetrieverPool p;
    p.zero_shot = &initial;
    p.ropg_rl = rl ? &*rl : nullptr;
    p.ropg_kd = kd ? &*kd : nullptr;
    return p;
  }

  void need_trained() {
    if (rl && kd) return;
    fs::path rl_path = ropg_checkpoint_path(*env, TrainConfig::Algo::RL);
    fs::path kd_path = ropg_checkpoint_path(*env, TrainConfig::Algo::KD);
    rl = load_params(rl_path);
    kd = load_params(kd_path);
    checkpoint_digests["ropg_rl"] = checkpoint_digest(rl_path);
    checkpoint_digests["ropg_kd"] = checkpoint_digest(kd_path);
  }
};

void write_summary(const Env& env, const std::string& name, json summary) {
  summary["config_digest"] = env.cfg.digest();
  fs::path dir = fs::path(env.cfg.output_dir) / ("eval-" + name);
  write_file(dir / "summary.json", summary.dump(1) + "\n");
  std::printf("report: %s\n", (dir / "summary.json").string().c_str());
}

// Single-retriever evaluation: retrieve, prompt, generate, grade.
int eval_retriever(Env& env, EvalContext& ctx, RetrieverKind kind) {
  if (kind == RetrieverKind::RopgRl || kind == RetrieverKind::RopgKd) ctx.need_trained();
  RetrieverPool pool = ctx.pool();
  const Dataset& ds = env.eval_set;

  std::vector<SelectionExample> singles;  // one-entry "examples" reuse the metric plumbing
  std::vector<int> choices;
  std::vector<EvalOutcome> outcomes;
  std::string run_lines;
  for (const auto& inst : ds.instances) {
    RenderedProfile rendered = RenderedProfile::make(env.templates, *inst.user, inst.task);
    std::string query = make_query(env.templates, inst);
    ScoredList list = pool.retrieve(kind, rendered, query, env.cfg.retrieval_k);
    PromptParts parts = build_prompt_parts(env.templates, inst, list);
    std::string output = env.generator->generate(parts.prompt);
    double eval = eval_dispatch(inst.task, inst.target, output);
    append_run_lines(run_lines, inst.instance_id, list);

    SelectionExample ex;
    ex.instance_id = inst.instance_id;
    ex.task = inst.task;
    ex.target = inst.target;
    ex.input_text = inst.input_text;
    ex.entries[0] = parts.entries;
    ex.prompts[0] = parts.prompt;
    ex.outputs[0] = output;
    ex.evals[0] = eval;
    ex.has_outputs = true;
    singles.push_back(std::move(ex));
    choices.push_back(0);

    EvalOutcome oc;
    oc.instance_id = inst.instance_id;
    oc.variant = retriever_name(kind);
    oc.score = eval;
    outcomes.push_back(std::move(oc));
  }

  std::string name = std::string("retriever-") + retriever_name(kind);
  fs::path dir = fs::path(env.cfg.output_dir) / ("eval-" + name);
  write_file(dir / "outcomes.jsonl", outcomes_to_jsonl(outcomes));
  write_file(dir / "run.tsv", run_lines);
  json summary;
  summary["kind"] = "retriever";
  summary["retriever"] = retriever_name(kind);
  summary["instances"] = singles.size();
  summary["metrics"] = metrics_json(singles, choices, env.task());
  summary["checkpoints"] = ctx.checkpoint_digests;
  write_summary(env, name, std::move(summary));
  return 0;
}

// Pool-wide evaluation shared by the selector baselines and the trained
// selection models.
int eval_selector(Env& env, EvalContext& ctx, const std::string& selector) {
  ctx.need_trained();
  RetrieverPool pool = ctx.pool();
  const Dataset& ds = env.eval_set;
  BuildExamplesResult built = build_examples(ds, pool, *env.generator, env.templates,
                                             env.cfg.retrieval_k, env.cfg.workers);
  const std::vector<SelectionExample>& examples = built.examples;
  if (examples.empty()) throw DataError("eval: no usable instances");

  // Instances aligned with retained examples (QPP and RRF need profiles).
  std::map<std::string, const Instance*> by_id;
  for (const auto& inst : ds.instances) by_id[inst.instance_id] = &inst;

  std::vector<int> choices;
  json summary;
  summary["kind"] = "selector";
  summary["selector"] = selector;

  if (selector == "rspg-pre" || selector == "rspg-post") {
    SelectionParams::Mode mode =
        selector == "rspg-post" ? SelectionParams::Mode::Post : SelectionParams::Mode::Pre;
    fs::path ck = rspg_checkpoint_path(env, mode);
    SelectionParams sel;
    sel.scorer = load_params(ck);
    sel.mode = mode;
    sel.token_cap = env.cfg.selection_token_cap;
    ctx.checkpoint_digests["rspg"] = checkpoint_digest(ck);
    for (const auto& ex : examples) choices.push_back(select(env.templates, sel, ex));
  } else if (selector.rfind("qpp:", 0) == 0) {
    auto method = parse_qpp(selector.substr(4));
    if (!method) throw ConfigError("unknown qpp method in selector: " + selector);
    for (const auto& ex : examples) {
      const Instance& inst = *by_id.at(ex.instance_id);
      RenderedProfile rendered = RenderedProfile::make(env.templates, *inst.user, inst.task);
      std::string query = make_query(env.templates, inst);
      std::array<ScoredList, kPoolSize> views;
      for (size_t r = 0; r < kPoolOrder.size(); ++r)
        views[r] = pool.full_view(kPoolOrder[r], rendered, query);
      choices.push_back(qpp_select(*method, views, query));
    }
  } else if (selector == "rrf") {
    // Fused retrieval: grade the fused prompt itself.
    std::vector<SelectionExample> fused_examples;
    std::vector<int> fused_choices;
    for (const auto& ex : examples) {
      const Instance& inst = *by_id.at(ex.instance_id);
      RenderedProfile rendered = RenderedProfile::make(env.templates, *inst.user, inst.task);
      std::string query = make_query(env.templates, inst);
      std::vector<ScoredList> views;
      for (RetrieverKind kind : kPoolOrder)
        views.push_back(pool.full_view(kind, rendered, query));
      ScoredList fused = rrf_fuse(views);
      fused.items.resize(std::min(fused.items.size(), size_t(env.cfg.retrieval_k)));
      PromptParts parts = build_prompt_parts(env.templates, inst, fused);
      std::string output = env.generator->generate(parts.prompt);
      SelectionExample fe;
      fe.instance_id = inst.instance_id;
      fe.task = inst.task;
      fe.target = inst.target;
      fe.input_text = inst.input_text;
      fe.outputs[0] = output;
      fe.evals[0] = eval_dispatch(inst.task, inst.target, output);
      fe.has_outputs = true;
      fused_examples.push_back(std::move(fe));
      fused_choices.push_back(0);
    }
    summary["instances"] = fused_examples.size();
    summary["metrics"] = metrics_json(fused_examples, fused_choices, env.task());
    summary["oracle_bounds"] = bounds_json(examples, env.task());
    summary["checkpoints"] = ctx.checkpoint_digests;
    write_summary(env, "selector-rrf", std::move(summary));
    return 0;
  } else {
    throw ConfigError("unknown selector: " + selector);
  }

  // Per-instance selection records.
  std::string lines;
  for (size_t i = 0; i < examples.size(); ++i) {
    json rec;
    rec["instance_id"] = examples[i].instance_id;
    rec["choice"] = choices[i];
    rec["choice_name"] = retriever_name(kPoolOrder[size_t(choices[i])]);
    rec["evals"] = examples[i].evals;
    rec["success"] =
        examples[i].evals[size_t(choices[i])] >= max_eval(examples[i]) - kEvalTieTolerance;
    lines += rec.dump();
    lines += '\n';
  }
  std::string name = "selector-" + selector;
  for (char& c : name)
    if (c == ':') c = '-';
  fs::path dir = fs::path(env.cfg.output_dir) / ("eval-" + name);
  write_file(dir / "selections.jsonl", lines);

  summary["instances"] = examples.size();
  summary["dropped"] = built.dropped;
  summary["success_rate"] = success_rate(choices, examples);
  auto rates = winning_rate(examples);
  json wr;
  for (size_t r = 0; r < kPoolOrder.size(); ++r) wr[retriever_name(kPoolOrder[r])] = rates[r];
  summary["winning_rate"] = wr;
  summary["metrics"] = metrics_json(examples, choices, env.task());
  summary["oracle_bounds"] = bounds_json(examples, env.task());
  summary["checkpoints"] = ctx.checkpoint_digests;
  write_summary(env, name, std::move(summary));
  return 0;
}

int eval_oracle(Env& env, EvalContext& ctx) {
  ctx.need_trained();
  RetrieverPool pool = ctx.pool();
  BuildExamplesResult built = build_examples(env.eval_set, pool, *env.generator, env.templates,
                                             env.cfg.retrieval_k, env.cfg.workers);
  if (built.examples.empty()) throw DataError("eval: no usable instances");
  json summary;
  summary["kind"] = "oracle";
  summary["instances"] = built.examples.size();
  summary["oracle_bounds"] = bounds_json(built.examples, env.task());
  auto rates = winning_rate(built.examples);
  json wr;
  for (size_t r = 0; r < kPoolOrder.size(); ++r) wr[retriever_name(kPoolOrder[r])] = rates[r];
  summary["winning_rate"] = wr;
  summary["checkpoints"] = ctx.checkpoint_digests;
  write_summary(env, "oracle", std::move(summary));
  return 0;
}

int cmd_eval(const CliOptions& opt, const std::string& retriever, const std::string& selector,
             bool oracle) {
  int modes = int(!retriever.empty()) + int(!selector.empty()) + int(oracle);
  if (modes != 1)
    throw ConfigError("eval needs exactly one of --retriever, --selector, --oracle");
  Env env = make_env(opt);
  EvalContext ctx{&env, initial_scorer(env), std::nullopt, std::nullopt, json::object()};
  if (!retriever.empty()) {
    auto kind = parse_retriever(retriever);
    if (!kind) throw ConfigError("unknown retriever: " + retriever);
    return eval_retriever(env, ctx, *kind);
  }
  if (oracle) return eval_oracle(env, ctx);
  return eval_selector(env, ctx, selector);
}

// ---------------------------------------------------------------------------
// report: human-readable digest of the eval reports under output_dir.
// ---------------------------------------------------------------------------

int cmd_report(const CliOptions& opt) {
  RunConfig cfg = load_config(opt);
  fs::path root(cfg.output_dir);
  if (!fs::exists(root)) throw DataError("no output directory: " + root.string());
  std::vector<fs::path> summaries;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    fs::path s = entry.path() / "summary.json";
    if (fs::exists(s)) summaries.push_back(s);
  }
  std::sort(summaries.begin(), summaries.end());
  if (summaries.empty()) {
    std::printf("no eval reports under %s\n", root.string().c_str());
    return 0;
  }
  for (const auto& path : summaries) {
    json s = json::parse(read_file(path));
    std::printf("== %s\n", path.parent_path().filename().string().c_str());
    if (s.contains("metrics")) {
      for (auto it = s["metrics"].begin(); it != s["metrics"].end(); ++it)
        std::printf("   %-12s %.4f\n", it.key().c_str(), it.value().get<double>());
    }
    if (s.contains("success_rate"))
      std::printf("   %-12s %.4f\n", "success", s["success_rate"].get<double>());
    if (s.contains("oracle_bounds")) {
      for (auto it = s["oracle_bounds"].begin(); it != s["oracle_bounds"].end(); ++it)
        std::printf("   bounds %-10s [%.4f, %.4f]\n", it.key().c_str(),
                    it.value()["lower"].get<double>(), it.value()["upper"].get<double>());
    }
    if (s.contains("winning_rate")) {
      std::printf("   winning rates:");
      for (auto it = s["winning_rate"].begin(); it != s["winning_rate"].end(); ++it)
        std::printf(" %s=%.3f", it.key().c_str(), it.value().get<double>());
      std::printf("\n");
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retrieval-optimization laboratory for personalized generation"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  CliOptions opt;
  app.add_option("--config", opt.config_path, "path to the run config json");
  app.add_option("--set", opt.overrides, "config override key=value (repeatable)");
  uint64_t seed_val = 0;
  auto* seed_opt = app.add_option("--seed", seed_val, "master seed override");
  int workers_val = 0;
  auto* workers_opt = app.add_option("--workers", workers_val, "generator worker cap");
  std::string cache_val;
  auto* cache_opt = app.add_option("--cache-dir", cache_val, "generation cache directory");

  auto* ingest = app.add_subcommand("ingest", "load a dataset and print its statistics");
  auto* synth = app.add_subcommand("synth", "generate the planted synthetic benchmark");
  auto* train_ropg = app.add_subcommand("train-ropg", "train the dense retriever from feedback");
  std::string algo;
  train_ropg->add_option("--algo", algo, "rl or kd")->check(CLI::IsMember({"rl", "kd"}));
  int ropg_epochs = -1;
  auto* ropg_epochs_opt = train_ropg->add_option("--epochs", ropg_epochs, "epoch override");
  auto* train_rspg_cmd = app.add_subcommand("train-rspg", "train the retriever-selection model");
  std::string mode;
  train_rspg_cmd->add_option("--mode", mode, "pre or post")->check(CLI::IsMember({"pre", "post"}));
  int rspg_epochs = -1;
  auto* rspg_epochs_opt = train_rspg_cmd->add_option("--epochs", rspg_epochs, "epoch override");
  auto* eval = app.add_subcommand("eval", "evaluate a retriever, selector, or the oracle bounds");
  std::string retriever, selector;
  bool oracle = false;
  eval->add_option("--retriever", retriever, "none|recency|bm25|dense_zero_shot|ropg_rl|ropg_kd");
  eval->add_option("--selector", selector, "rspg-pre|rspg-post|rrf|qpp:<wig|nqc|sigma_max|sigma_50>");
  eval->add_flag("--oracle", oracle, "report oracle lower/upper bounds");
  auto* report = app.add_subcommand("report", "print the eval summaries under output_dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (*seed_opt) opt.seed = seed_val;
  if (*workers_opt) opt.workers = workers_val;
  if (*cache_opt) opt.cache_dir = cache_val;

  try {
    if (ingest->parsed()) return cmd_ingest(opt);
    if (synth->parsed()) return cmd_synth(opt);
    if (train_ropg->parsed())
      return cmd_train_ropg(opt, algo,
                            *ropg_epochs_opt ? std::optional<int>(ropg_epochs) : std::nullopt);
    if (train_rspg_cmd->parsed())
      return cmd_train_rspg(opt, mode,
                            *rspg_epochs_opt ? std::optional<int>(rspg_epochs) : std::nullopt);
    if (eval->parsed()) return cmd_eval(opt, retriever, selector, oracle);
    if (report->parsed()) return cmd_report(opt);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const GenerationError& e) {
    std::fprintf(stderr, "generation error: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
