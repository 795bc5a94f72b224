#pragma once

// Retriever-pool management and per-input retriever selection: the trainable
// pre/post-generation selection model, unsupervised query-performance
// predictors, reciprocal rank fusion, and the comparison machinery (success
// rate, winning rate, oracle bounds).

#include <array>
#include <atomic>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "lamplab/common.hpp"
#include "lamplab/data.hpp"
#include "lamplab/generator.hpp"
#include "lamplab/metrics.hpp"
#include "lamplab/retrieval.hpp"
#include "lamplab/ropg.hpp"
#include "lamplab/textmodel.hpp"

namespace lamplab {

constexpr std::array<RetrieverKind, kPoolSize> kPoolOrder = {
    RetrieverKind::None,          RetrieverKind::Recency, RetrieverKind::BM25,
    RetrieverKind::DenseZeroShot, RetrieverKind::RopgRl,  RetrieverKind::RopgKd,
};

// The configured pool: the zero-shot scorer is the shared initialization, the
// trained entries come from retriever training checkpoints.
struct RetrieverPool {
  const ScorerParams* zero_shot = nullptr;
  const ScorerParams* ropg_rl = nullptr;
  const ScorerParams* ropg_kd = nullptr;

  const ScorerParams& params_for(RetrieverKind kind) const {
    const ScorerParams* p = nullptr;
    if (kind == RetrieverKind::DenseZeroShot) p = zero_shot;
    if (kind == RetrieverKind::RopgRl) p = ropg_rl;
    if (kind == RetrieverKind::RopgKd) p = ropg_kd;
    if (!p)
      throw ConfigError(std::string("retriever pool: no parameters for ") + retriever_name(kind));
    return *p;
  }

  ScoredList retrieve(RetrieverKind kind, const RenderedProfile& rendered,
                      const std::string& query, int k) const {
    switch (kind) {
      case RetrieverKind::None:
        return no_retrieval();
      case RetrieverKind::Recency:
        return recency_retrieve(*rendered.profile, k);
      case RetrieverKind::BM25:
        return bm25_retrieve(Bm25Index::build(rendered), query, k);
      case RetrieverKind::DenseZeroShot:
        return dense_retrieve(params_for(kind), query, rendered, k, /*idf_pooling=*/true, kind);
      case RetrieverKind::RopgRl:
      case RetrieverKind::RopgKd:
        return dense_retrieve(params_for(kind), query, rendered, k, /*idf_pooling=*/false, kind);
    }
    throw Error("retrieve: unknown retriever");
  }

  // Full-profile score view used by the query performance predictors; the
  // None retriever exposes zero for every item.
  ScoredList full_view(RetrieverKind kind, const RenderedProfile& rendered,
                       const std::string& query) const {
    int n = std::max<int>(1, int(rendered.profile->docs.size()));
    if (kind == RetrieverKind::None) return none_qpp_view(*rendered.profile);
    return retrieve(kind, rendered, query, n);
  }
};

// ---------------------------------------------------------------------------
// Selection examples: per instance, one prompt/output/Eval per pool entry.
// ---------------------------------------------------------------------------

struct SelectionExample {
  std::string instance_id;
  TaskKind task = TaskKind::Synthetic;
  std::string target;
  std::string input_text;
  std::array<std::vector<std::string>, kPoolSize> entries;  // rendered prompt entries
  std::array<std::string, kPoolSize> prompts;
  std::array<std::string, kPoolSize> outputs;
  std::array<double, kPoolSize> evals{};
  bool has_outputs = false;
};

struct BuildExamplesResult {
  std::vector<SelectionExample> examples;
  int dropped = 0;  // instances lost to generation failures
};

inline BuildExamplesResult build_examples(const Dataset& ds, const RetrieverPool& pool,
                                          Generator& generator, const TemplateSet& templates,
                                          int k = 4, int workers = 1) {
  std::vector<std::optional<SelectionExample>> slots(ds.instances.size());
  auto work = [&](size_t i) {
    const Instance& inst = ds.instances[i];
    RenderedProfile rendered = RenderedProfile::make(templates, *inst.user, inst.task);
    std::string query = make_query(templates, inst);
    SelectionExample ex;
    ex.instance_id = inst.instance_id;
    ex.task = inst.task;
    ex.target = inst.target;
    ex.input_text = inst.input_text;
    try {
      for (size_t r = 0; r < kPoolOrder.size(); ++r) {
        ScoredList list = pool.retrieve(kPoolOrder[r], rendered, query, k);
        PromptParts parts = build_prompt_parts(templates, inst, list);
        ex.entries[r] = parts.entries;
        ex.prompts[r] = parts.prompt;
        ex.outputs[r] = generator.generate(parts.prompt);
        ex.evals[r] = eval_dispatch(inst.task, inst.target, ex.outputs[r]);
      }
    } catch (const GenerationError& e) {
      std::cerr << "warning: dropping instance " << inst.instance_id
                << " from selection (" << e.what() << ")\n";
      return;
    }
    ex.has_outputs = true;
    slots[i] = std::move(ex);
  };
  if (workers <= 1) {
    for (size_t i = 0; i < slots.size(); ++i) work(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w)
      threads.emplace_back([&]() {
        for (size_t i = next.fetch_add(1); i < slots.size(); i = next.fetch_add(1)) work(i);
      });
    for (auto& t : threads) t.join();
  }
  BuildExamplesResult out;
  for (auto& s : slots) {
    if (s)
      out.examples.push_back(std::move(*s));
    else
      out.dropped += 1;
  }
  return out;
}

// Target distribution over the pool: softmax of the per-retriever Eval scores.
inline std::vector<double> target_selection_distribution(const SelectionExample& ex) {
  return softmax_stable(std::vector<double>(ex.evals.begin(), ex.evals.end()));
}

// ---------------------------------------------------------------------------
// Selection model: the shared scorer with a linear head. Pre mode scores the
// prompt; post mode scores prompt + separator + generated output. Inputs are
// capped at 1024 tokens by dropping whole prompt entries from the tail, then
// trimming output characters.
// ---------------------------------------------------------------------------

constexpr const char* kOutputSeparator = " output: ";

struct SelectionParams {
  ScorerParams scorer;
  enum class Mode { Pre, Post } mode = Mode::Pre;
  int token_cap = 1024;

  const char* mode_name() const { return mode == Mode::Pre ? "pre" : "post"; }
};

inline std::string selection_input(const TemplateSet& templates, const SelectionParams& params,
                                   const SelectionExample& ex, size_t retriever_index) {
  if (params.mode == SelectionParams::Mode::Post && !ex.has_outputs)
    throw ConfigError("selection: post mode requires generated outputs");
  const TaskTemplate& tt = templates.of(ex.task);
  std::vector<std::string> entries = ex.entries[retriever_index];
  std::string output = params.mode == SelectionParams::Mode::Post
                           ? kOutputSeparator + ex.outputs[retriever_index]
                           : std::string();
  auto assemble = [&]() { return assemble_prompt(tt, entries, ex.input_text) + output; };
  std::string input = assemble();
  while (!entries.empty() && prompt_token_count(input) > size_t(params.token_cap)) {
    entries.pop_back();
    input = assemble();
  }
  while (!output.empty() && prompt_token_count(input) > size_t(params.token_cap)) {
    output.pop_back();
    input = assemble();
  }
  return input;
}

inline std::vector<double> selection_scores(const TemplateSet& templates,
                                            const SelectionParams& params,
                                            const SelectionExample& ex) {
  std::vector<double> scores(kPoolSize, 0.0);
  for (size_t r = 0; r < kPoolOrder.size(); ++r)
    scores[r] = head_score(params.scorer, selection_input(templates, params, ex, r));
  return scores;
}

inline int select(const TemplateSet& templates, const SelectionParams& params,
                  const SelectionExample& ex) {
  return int(argmax_lowest(selection_scores(templates, params, ex)));
}

inline StepOutput rspg_step(const TemplateSet& templates,
                            const std::vector<const SelectionExample*>& batch,
                            const SelectionParams& params) {
  StepOutput out;
  out.grads = GradientBundle::zeros_like(params.scorer);
  std::vector<ScoreInput> inputs;
  std::vector<double> upstream;
  int used = 0;
  for (const SelectionExample* ex : batch) {
    std::vector<double> scores = selection_scores(templates, params, *ex);
    std::vector<double> probs = softmax_stable(scores);
    std::vector<double> target = target_selection_distribution(*ex);
    double kl = 0.0;
    for (size_t r = 0; r < probs.size(); ++r) {
      if (target[r] > 0) kl += target[r] * std::log(target[r] / std::max(probs[r], 1e-300));
      inputs.push_back(ScoreInput::head(selection_input(templates, params, *ex, r)));
      upstream.push_back(probs[r] - target[r]);
    }
    out.loss += kl;
    ++used;
  }
  if (used > 0) {
    for (double& u : upstream) u /= double(used);
    out.grads = backprop_scores(params.scorer, inputs, upstream);
    out.loss /= double(used);
  }
  out.instances = used;
  return out;
}

struct RspgTrainOutput {
  SelectionParams params;
  std::filesystem::path final_checkpoint;
  std::vector<EpochSummary> epochs;
};

inline RspgTrainOutput train_rspg(const std::vector<SelectionExample>& examples,
                                  const TrainConfig& config, const TemplateSet& templates,
                                  SelectionParams initial, const std::filesystem::path& out_dir) {
  config.validate();
  if (examples.empty()) throw DataError("train_rspg: no selection examples");
  if (!initial.scorer.head) throw ConfigError("train_rspg: selection scorer needs a head");
  std::filesystem::create_directories(out_dir);

  RspgTrainOutput out;
  out.params = std::move(initial);

  long long group = (long long)(config.batch_size) * config.accum_steps;
  long long steps_per_epoch = (long long)((examples.size() + size_t(group) - 1) / size_t(group));
  StepConfig step_cfg;
  step_cfg.base_lr = config.base_lr;
  step_cfg.total_steps = std::max(1LL, config.epochs * steps_per_epoch);
  step_cfg.warmup_frac = config.warmup_frac;
  step_cfg.clip_norm = config.clip_norm;
  AdamState state = AdamState::zeros_like(out.params.scorer);

  std::string log_lines;
  long long global_step = 0;
  std::string tag = "rspg-" + std::string(out.params.mode_name());

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<size_t> order(examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = Rng::stream(config.seed, tag + "-order-" + std::to_string(epoch));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    long long epoch_steps = 0;
    size_t cursor = 0;
    while (cursor < order.size()) {
      GradientBundle acc = GradientBundle::zeros_like(out.params.scorer);
      double step_loss = 0.0;
      int micro_count = 0;
      for (int a = 0; a < config.accum_steps && cursor < order.size(); ++a) {
        std::vector<const SelectionExample*> batch;
        for (int b = 0; b < config.batch_size && cursor < order.size(); ++b, ++cursor)
          batch.push_back(&examples[order[cursor]]);
        StepOutput so = rspg_step(templates, batch, out.params);
        acc.add_scaled(so.grads, 1.0);
        step_loss += so.loss;
        ++micro_count;
      }
      if (micro_count == 0) break;
      acc.scale(1.0 / double(micro_count));
      step_loss /= double(micro_count);
      if (!std::isfinite(step_loss)) throw Error("train_rspg: non-finite loss, aborting");
      adam_step(out.params.scorer, acc, state, step_cfg);
      ++global_step;
      ++epoch_steps;
      epoch_loss += step_loss;
      json rec;
      rec["step"] = global_step;
      rec["epoch"] = epoch;
      rec["loss"] = step_loss;
      rec["lr"] = scheduled_lr(step_cfg, global_step);
      log_lines += rec.dump();
      log_lines += '\n';
    }
    EpochSummary es;
    es.epoch = epoch;
    es.mean_loss = epoch_steps ? epoch_loss / double(epoch_steps) : 0.0;
    out.epochs.push_back(es);
  }

  out.final_checkpoint = out_dir / ("ckpt-" + tag + "-final.bin");
  save_checkpoint(out.final_checkpoint, out.params.scorer, nullptr);
  write_file(out_dir / ("train-log-" + tag + ".jsonl"), log_lines);
  return out;
}

// ---------------------------------------------------------------------------
// Reciprocal rank fusion. The None retriever (and empty lists generally)
// contribute nothing.
// ---------------------------------------------------------------------------

inline ScoredList rrf_fuse(const std::vector<ScoredList>& lists, int k_rrf = 60) {
  std::map<std::string, double> fused;
  for (const auto& list : lists) {
    if (list.retriever == RetrieverKind::None) continue;
    for (size_t rank = 0; rank < list.items.size(); ++rank)
      fused[list.items[rank].first] += 1.0 / double(k_rrf + rank + 1);
  }
  ScoredList out;
  out.retriever = RetrieverKind::None;  // fused lists carry no pool identity
  out.items.assign(fused.begin(), fused.end());
  std::sort(out.items.begin(), out.items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Query performance predictors over full-profile score views, inspecting the
// top k = 4 scores (matching the prompt depth). Standard deviations are
// population deviations.
// ---------------------------------------------------------------------------

enum class QppMethod { WIG, NQC, SigmaMax, SigmaPct };

inline const char* qpp_name(QppMethod m) {
  switch (m) {
    case QppMethod::WIG: return "wig";
    case QppMethod::NQC: return "nqc";
    case QppMethod::SigmaMax: return "sigma_max";
    case QppMethod::SigmaPct: return "sigma_50";
  }
  return "?";
}

inline std::optional<QppMethod> parse_qpp(std::string_view s) {
  std::string n = lowercase_trim(s);
  if (n == "wig") return QppMethod::WIG;
  if (n == "nqc") return QppMethod::NQC;
  if (n == "sigma_max" || n == "sigmamax") return QppMethod::SigmaMax;
  if (n == "sigma_50" || n == "sigma50" || n == "sigmapct") return QppMethod::SigmaPct;
  return std::nullopt;
}

namespace qpp_detail {

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

inline double pop_stddev(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double mu = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / double(v.size()));
}

}  // namespace qpp_detail

inline double qpp_score(QppMethod method, const ScoredList& full_view, const std::string& query,
                        int k = 4, double pct = 0.5) {
  if (full_view.items.empty()) throw Error("qpp_score: empty score view");
  std::vector<double> all;
  all.reserve(full_view.items.size());
  for (const auto& [id, s] : full_view.items) {
    (void)id;
    all.push_back(s);
  }
  size_t k_eff = std::min(size_t(k), all.size());
  std::vector<double> top(all.begin(), all.begin() + long(k_eff));
  double mu_all = qpp_detail::mean(all);

  switch (method) {
    case QppMethod::WIG: {
      size_t qlen = std::max<size_t>(1, split_tokens(query).size());
      double s = 0.0;
      for (double x : top) s += x - mu_all;
      return s / double(k_eff) / std::sqrt(double(qlen));
    }
    case QppMethod::NQC:
      return qpp_detail::pop_stddev(top) / (std::abs(mu_all) + 1e-9);
    case QppMethod::SigmaMax: {
      double best = 0.0;
      for (size_t i = 1; i <= top.size(); ++i) {
        std::vector<double> prefix(top.begin(), top.begin() + long(i));
        best = std::max(best, qpp_detail::pop_stddev(prefix));
      }
      return best;
    }
    case QppMethod::SigmaPct: {
      double s1 = all[0];
      if (s1 <= 0.0) return 0.0;
      std::vector<double> kept;
      for (double x : all)
        if (x >= pct * s1) kept.push_back(x);
      return qpp_detail::pop_stddev(kept);
    }
  }
  throw Error("qpp_score: unknown method");
}

inline int qpp_select(QppMethod method, const std::array<ScoredList, kPoolSize>& views,
                      const std::string& query) {
  std::vector<double> scores(kPoolSize, 0.0);
  for (size_t r = 0; r < views.size(); ++r) scores[r] = qpp_score(method, views[r], query);
  return int(argmax_lowest(scores));
}

// ---------------------------------------------------------------------------
// Comparison machinery.
// ---------------------------------------------------------------------------

constexpr double kEvalTieTolerance = 1e-12;

inline double max_eval(const SelectionExample& ex) {
  double mx = ex.evals[0];
  for (double e : ex.evals) mx = std::max(mx, e);
  return mx;
}

// Fraction of instances whose chosen retriever ties the per-instance best.
inline double success_rate(const std::vector<int>& selections,
                           const std::vector<SelectionExample>& examples) {
  if (selections.size() != examples.size()) throw Error("success_rate: length mismatch");
  if (examples.empty()) return 0.0;
  int hits = 0;
  for (size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].evals[size_t(selections[i])] >= max_eval(examples[i]) - kEvalTieTolerance)
      ++hits;
  }
  return double(hits) / double(examples.size());
}

// Per-retriever fraction of instances where it ties the best; ties reward
// every winner, so the rates may sum above 1.
inline std::array<double, kPoolSize> winning_rate(const std::vector<SelectionExample>& examples) {
  std::array<double, kPoolSize> rates{};
  if (examples.empty()) return rates;
  for (const auto& ex : examples) {
    double mx = max_eval(ex);
    for (size_t r = 0; r < kPoolSize; ++r)
      if (ex.evals[r] >= mx - kEvalTieTolerance) rates[r] += 1.0;
  }
  for (double& r : rates) r /= double(examples.size());
  return rates;
}

// ---------------------------------------------------------------------------
// Corpus metrics over a per-instance choice of retriever, and oracle bounds.
// ---------------------------------------------------------------------------

enum class CorpusMetric { MeanEval, Accuracy, MacroF1, MAE, RMSE, Rouge1, RougeL };

inline const char* corpus_metric_name(CorpusMetric m) {
  switch (m) {
    case CorpusMetric::MeanEval: return "mean_eval";
    case CorpusMetric::Accuracy: return "accuracy";
    case CorpusMetric::MacroF1: return "macro_f1";
    case CorpusMetric::MAE: return "mae";
    case CorpusMetric::RMSE: return "rmse";
    case CorpusMetric::Rouge1: return "rouge1";
    case CorpusMetric::RougeL: return "rougeL";
  }
  return "?";
}

inline bool metric_lower_is_better(CorpusMetric m) {
  return m == CorpusMetric::MAE || m == CorpusMetric::RMSE;
}

// The headline metrics reported for a task, first entry is primary.
inline std::vector<CorpusMetric> task_metrics(TaskKind task) {
  switch (task) {
    case TaskKind::CitationIdent: return {CorpusMetric::Accuracy};
    case TaskKind::MovieTag: return {CorpusMetric::Accuracy, CorpusMetric::MacroF1};
    case TaskKind::ProductRating: return {CorpusMetric::MAE, CorpusMetric::RMSE};
    case TaskKind::Synthetic: return {CorpusMetric::Accuracy};
    default: return {CorpusMetric::Rouge1, CorpusMetric::RougeL};
  }
}

inline double corpus_metric_value(CorpusMetric metric,
                                  const std::vector<SelectionExample>& examples,
                                  const std::vector<int>& choices) {
  if (choices.size() != examples.size()) throw Error("corpus_metric_value: length mismatch");
  if (examples.empty()) return 0.0;
  switch (metric) {
    case CorpusMetric::MeanEval: {
      double s = 0.0;
      for (size_t i = 0; i < examples.size(); ++i) s += examples[i].evals[size_t(choices[i])];
      return s / double(examples.size());
    }
    case CorpusMetric::Accuracy:
    case CorpusMetric::MacroF1: {
      std::vector<std::string> golds, preds;
      std::map<std::string, bool> class_set;
      for (size_t i = 0; i < examples.size(); ++i) {
        golds.push_back(lowercase_trim(examples[i].target));
        preds.push_back(lowercase_trim(examples[i].outputs[size_t(choices[i])]));
        class_set[golds.back()] = true;
      }
      if (metric == CorpusMetric::Accuracy) return accuracy(golds, preds);
      std::vector<std::string> classes;
      for (const auto& [c, _] : class_set) {
        (void)_;
        classes.push_back(c);
      }
      return f1_macro(golds, preds, classes);
    }
    case CorpusMetric::MAE:
    case CorpusMetric::RMSE: {
      std::vector<double> golds;
      std::vector<std::string> preds;
      for (size_t i = 0; i < examples.size(); ++i) {
        golds.push_back(double(parse_rating(examples[i].target)));
        preds.push_back(examples[i].outputs[size_t(choices[i])]);
      }
      return metric == CorpusMetric::MAE ? mae(golds, preds) : rmse(golds, preds);
    }
    case CorpusMetric::Rouge1:
    case CorpusMetric::RougeL: {
      double s = 0.0;
      for (size_t i = 0; i < examples.size(); ++i) {
        const std::string& out = examples[i].outputs[size_t(choices[i])];
        s += metric == CorpusMetric::Rouge1 ? rouge1(examples[i].target, out)
                                            : rougeL(examples[i].target, out);
      }
      return s / double(examples.size());
    }
  }
  throw Error("corpus_metric_value: unknown metric");
}

inline std::vector<int> best_choices(const std::vector<SelectionExample>& examples) {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& ex : examples)
    out.push_back(int(argmax_lowest(std::vector<double>(ex.evals.begin(), ex.evals.end()))));
  return out;
}

inline std::vector<int> worst_choices(const std::vector<SelectionExample>& examples) {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    size_t worst = 0;
    for (size_t r = 1; r < kPoolSize; ++r)
      if (ex.evals[r] < ex.evals[worst]) worst = r;
    out.push_back(int(worst));
  }
  return out;
}

// lower = corpus metric under the per-instance worst-Eval choice, upper under
// the best-Eval choice. For error metrics the "upper" bound is numerically
// the smaller value.
inline std::pair<double, double> oracle_bounds(const std::vector<SelectionExample>& examples,
                                               CorpusMetric metric) {
  double lower = corpus_metric_value(metric, examples, worst_choices(examples));
  double upper = corpus_metric_value(metric, examples, best_choices(examples));
  return {lower, upper};
}

}  // namespace lamplab
