#pragma once

// Feedback-driven retriever training. Both algorithms restrict the softmax to
// the top-l candidates under the initial parameters, precompute one
// generator evaluation per (instance, candidate) pair, and then either
//
//   rl: sample one candidate per instance from the policy and ascend
//       (Eval(d) - Eval(d_b)) * log pi(d), with d_b the initial top-1, or
//   kd: pull the policy softmax toward the target distribution
//       softmax(Eval(d)) by minimizing forward KL.
//
// Candidate sets, rewards and the baseline stay frozen at their initial
// values for the whole run.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "lamplab/common.hpp"
#include "lamplab/data.hpp"
#include "lamplab/generator.hpp"
#include "lamplab/metrics.hpp"
#include "lamplab/retrieval.hpp"
#include "lamplab/textmodel.hpp"

namespace lamplab {

struct TrainConfig {
  enum class Algo { RL, KD };
  Algo algo = Algo::KD;
  int epochs = 10;
  int batch_size = 8;
  int accum_steps = 8;  // effective batch = batch_size * accum_steps
  double base_lr = 1e-5;
  double warmup_frac = 0.05;
  double clip_norm = 1.0;
  int top_l = 16;
  double kd_temperature = 1.0;
  uint64_t seed = 1;
  int workers = 1;

  void validate() const {
    if (epochs < 0 || batch_size < 1 || accum_steps < 1 || top_l < 1)
      throw ConfigError("train config: counts must be positive");
    if (kd_temperature <= 0) throw ConfigError("train config: temperature must be positive");
  }

  const char* algo_name() const { return algo == Algo::RL ? "rl" : "kd"; }
};

// Candidate docs for one instance, ordered by initial dense score descending,
// plus the frozen per-candidate Eval scores.
struct CandidateRewards {
  std::string instance_id;
  std::string query;
  std::vector<std::string> doc_ids;
  std::vector<std::string> doc_texts;  // rendered
  std::vector<double> evals;           // Eval(y, M(phi_p(x, [d])))
  std::string baseline_doc_id;
  double baseline_eval = 0.0;

  double reward(size_t i) const { return evals[i] - baseline_eval; }
};

inline std::vector<std::string> build_candidates(const TemplateSet& templates,
                                                 const Instance& inst,
                                                 const ScorerParams& initial_params,
                                                 const RenderedProfile& rendered, int top_l) {
  if (inst.user->docs.empty()) throw DataError("build_candidates: empty profile");
  std::string query = make_query(templates, inst);
  ScoredList top = dense_retrieve(initial_params, query, rendered, top_l);
  return top.doc_ids();
}

inline std::vector<double> policy_scores(const ScorerParams& params, const std::string& query,
                                         const std::vector<std::string>& doc_texts) {
  std::vector<double> scores;
  scores.reserve(doc_texts.size());
  for (const auto& text : doc_texts) scores.push_back(score_pair(params, query, text));
  return scores;
}

inline std::vector<double> policy_probs(const ScorerParams& params, const std::string& query,
                                        const std::vector<std::string>& doc_texts) {
  if (doc_texts.empty()) throw Error("policy_probs: empty candidate set");
  return softmax_stable(policy_scores(params, query, doc_texts));
}

inline std::vector<double> kd_target(const CandidateRewards& rewards, double temperature = 1.0) {
  std::vector<double> scaled;
  scaled.reserve(rewards.evals.size());
  for (double e : rewards.evals) scaled.push_back(e / temperature);
  return softmax_stable(scaled);
}

// Evaluates one single-document prompt per candidate. Candidates whose
// generation fails are dropped with a warning; a baseline failure skips the
// instance entirely (empty return).
inline std::optional<CandidateRewards> precompute_rewards(const TemplateSet& templates,
                                                          const Instance& inst,
                                                          const ScorerParams& initial_params,
                                                          const RenderedProfile& rendered,
                                                          int top_l, Generator& generator) {
  CandidateRewards out;
  out.instance_id = inst.instance_id;
  out.query = make_query(templates, inst);
  std::vector<std::string> cand_ids = build_candidates(templates, inst, initial_params, rendered, top_l);
  if (cand_ids.empty()) return std::nullopt;

  std::map<std::string, size_t> doc_index;
  for (size_t i = 0; i < inst.user->docs.size(); ++i) doc_index[inst.user->docs[i].doc_id] = i;

  for (size_t c = 0; c < cand_ids.size(); ++c) {
    const std::string& doc_id = cand_ids[c];
    ScoredList single;
    single.items.emplace_back(doc_id, 1.0);
    std::string prompt = build_prompt(templates, inst, single);
    std::string output;
    try {
      output = generator.generate(prompt);
    } catch (const GenerationError& e) {
      if (c == 0) {
        std::cerr << "warning: skipping instance " << inst.instance_id
                  << " (baseline generation failed: " << e.what() << ")\n";
        return std::nullopt;
      }
      std::cerr << "warning: dropping candidate " << doc_id << " of instance "
                << inst.instance_id << " (" << e.what() << ")\n";
      continue;
    }
    double eval = eval_dispatch(inst.task, inst.target, output);
    out.doc_ids.push_back(doc_id);
    out.doc_texts.push_back(rendered.texts[doc_index.at(doc_id)]);
    out.evals.push_back(eval);
  }
  if (out.doc_ids.empty()) return std::nullopt;
  out.baseline_doc_id = out.doc_ids[0];
  out.baseline_eval = out.evals[0];
  return out;
}

// ---------------------------------------------------------------------------
// Gradient steps. Both return the batch-averaged descent bundle together with
// the quantities the training log tracks.
// ---------------------------------------------------------------------------

struct StepOutput {
  GradientBundle grads;
  double loss = 0.0;             // kd: mean KL; rl: mean surrogate -R log pi
  double expected_reward = 0.0;  // mean over batch of sum_d pi(d) * reward(d)
  int instances = 0;
};

namespace ropg_detail {

inline double expected_reward(const std::vector<double>& probs, const CandidateRewards& cr) {
  double er = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) er += probs[i] * cr.reward(i);
  return er;
}

}  // namespace ropg_detail

inline StepOutput rl_step(const std::vector<const CandidateRewards*>& batch,
                          const ScorerParams& params, Rng& rng) {
  StepOutput out;
  out.grads = GradientBundle::zeros_like(params);
  std::vector<ScoreInput> inputs;
  std::vector<double> upstream;
  int used = 0;
  for (const CandidateRewards* cr : batch) {
    if (cr->doc_ids.empty()) continue;
    std::vector<double> probs = policy_probs(params, cr->query, cr->doc_texts);
    size_t pick = rng.sample_cdf(probs);
    double reward = cr->reward(pick);
    out.loss += -reward * std::log(std::max(probs[pick], 1e-300));
    out.expected_reward += ropg_detail::expected_reward(probs, *cr);
    for (size_t j = 0; j < probs.size(); ++j) {
      double indicator = j == pick ? 1.0 : 0.0;
      inputs.push_back(ScoreInput::pair(cr->query, cr->doc_texts[j]));
      upstream.push_back(-reward * (indicator - probs[j]));
    }
    ++used;
  }
  if (used > 0) {
    for (double& u : upstream) u /= double(used);
    out.grads = backprop_scores(params, inputs, upstream);
    out.loss /= double(used);
    out.expected_reward /= double(used);
  }
  out.instances = used;
  return out;
}

inline StepOutput kd_step(const std::vector<const CandidateRewards*>& batch,
                          const ScorerParams& params, double temperature = 1.0) {
  StepOutput out;
  out.grads = GradientBundle::zeros_like(params);
  std::vector<ScoreInput> inputs;
  std::vector<double> upstream;
  int used = 0;
  for (const CandidateRewards* cr : batch) {
    if (cr->doc_ids.empty()) continue;
    std::vector<double> probs = policy_probs(params, cr->query, cr->doc_texts);
    std::vector<double> target = kd_target(*cr, temperature);
    double kl = 0.0;
    for (size_t j = 0; j < probs.size(); ++j) {
      if (target[j] > 0) kl += target[j] * std::log(target[j] / std::max(probs[j], 1e-300));
      inputs.push_back(ScoreInput::pair(cr->query, cr->doc_texts[j]));
      upstream.push_back(probs[j] - target[j]);
    }
    out.loss += kl;
    out.expected_reward += ropg_detail::expected_reward(probs, *cr);
    ++used;
  }
  if (used > 0) {
    for (double& u : upstream) u /= double(used);
    out.grads = backprop_scores(params, inputs, upstream);
    out.loss /= double(used);
    out.expected_reward /= double(used);
  }
  out.instances = used;
  return out;
}

// ---------------------------------------------------------------------------
// Reward-table persistence, keyed by (dataset digest, initial-params digest)
// so interrupted runs resume without regeneration.
// ---------------------------------------------------------------------------

inline std::string dataset_digest(const Dataset& ds) {
  auto [questions, outputs] = serialize_dataset(ds);
  return sha256_hex(questions.dump() + "\n" + outputs.dump());
}

inline std::string params_digest(const ScorerParams& p) {
  return sha256_hex(serialize_checkpoint(p, nullptr));
}

inline std::string rewards_to_jsonl(const std::vector<CandidateRewards>& tables) {
  std::string out;
  for (const auto& cr : tables) {
    json j;
    j["instance_id"] = cr.instance_id;
    j["query"] = cr.query;
    j["docs"] = cr.doc_ids;
    j["texts"] = cr.doc_texts;
    j["evals"] = cr.evals;
    j["baseline_doc"] = cr.baseline_doc_id;
    j["baseline_eval"] = cr.baseline_eval;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<CandidateRewards> rewards_from_jsonl(const std::string& text) {
  std::vector<CandidateRewards> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    CandidateRewards cr;
    cr.instance_id = j.at("instance_id").get<std::string>();
    cr.query = j.at("query").get<std::string>();
    cr.doc_ids = j.at("docs").get<std::vector<std::string>>();
    cr.doc_texts = j.at("texts").get<std::vector<std::string>>();
    cr.evals = j.at("evals").get<std::vector<double>>();
    cr.baseline_doc_id = j.at("baseline_doc").get<std::string>();
    cr.baseline_eval = j.at("baseline_eval").get<double>();
    out.push_back(std::move(cr));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full training loop.
// ---------------------------------------------------------------------------

struct EpochSummary {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_expected_reward = 0.0;
};

struct TrainOutput {
  ScorerParams params;
  std::filesystem::path final_checkpoint;
  std::vector<EpochSummary> epochs;
  int skipped_instances = 0;
};

// Runs precompute_rewards for every instance, optionally in parallel; result
// order is fixed by instance index regardless of scheduling.
inline std::vector<CandidateRewards> build_reward_tables(const Dataset& ds,
                                                         const TemplateSet& templates,
                                                         const ScorerParams& initial_params,
                                                         int top_l, Generator& generator,
                                                         int workers, int* skipped = nullptr) {
  std::vector<std::optional<CandidateRewards>> slots(ds.instances.size());
  auto work = [&](size_t i) {
    RenderedProfile rendered = RenderedProfile::make(templates, *ds.instances[i].user,
                                                     ds.instances[i].task);
    slots[i] = precompute_rewards(templates, ds.instances[i], initial_params, rendered, top_l,
                                  generator);
  };
  if (workers <= 1) {
    for (size_t i = 0; i < slots.size(); ++i) work(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        for (size_t i = next.fetch_add(1); i < slots.size(); i = next.fetch_add(1)) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  std::vector<CandidateRewards> out;
  int skip_count = 0;
  for (auto& slot : slots) {
    if (slot)
      out.push_back(std::move(*slot));
    else
      ++skip_count;
  }
  if (skipped) *skipped = skip_count;
  return out;
}

inline TrainOutput train_retriever(const Dataset& ds, const TrainConfig& config,
                                   Generator& generator, const TemplateSet& templates,
                                   const ScorerParams& initial_params,
                                   const std::filesystem::path& out_dir) {
  config.validate();
  if (ds.instances.empty()) throw DataError("train: dataset is empty");
  std::filesystem::create_directories(out_dir);

  // Reward tables: reuse the persisted file when dataset and initial params match.
  std::string key = sha256_hex(dataset_digest(ds) + ":" + params_digest(initial_params) + ":l" +
                               std::to_string(config.top_l))
                        .substr(0, 16);
  std::filesystem::path rewards_path = out_dir / ("rewards-" + key + ".jsonl");
  std::vector<CandidateRewards> tables;
  int skipped = 0;
  if (std::filesystem::exists(rewards_path)) {
    tables = rewards_from_jsonl(read_file(rewards_path));
  } else {
    tables = build_reward_tables(ds, templates, initial_params, config.top_l, generator,
                                 config.workers, &skipped);
    write_file(rewards_path, rewards_to_jsonl(tables));
  }

  TrainOutput out;
  out.params = initial_params;
  out.skipped_instances = skipped;

  long long group = (long long)(config.batch_size) * config.accum_steps;
  long long steps_per_epoch = (long long)((tables.size() + size_t(group) - 1) / size_t(group));
  StepConfig step_cfg;
  step_cfg.base_lr = config.base_lr;
  step_cfg.total_steps = std::max(1LL, config.epochs * steps_per_epoch);
  step_cfg.warmup_frac = config.warmup_frac;
  step_cfg.clip_norm = config.clip_norm;
  AdamState state = AdamState::zeros_like(out.params);

  Rng sample_rng = Rng::stream(config.seed, "ropg-sample");
  std::string log_lines;
  long long global_step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<size_t> order(tables.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = Rng::stream(config.seed, "ropg-order-" + std::to_string(epoch));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0, epoch_er = 0.0;
    long long epoch_steps = 0;
    size_t cursor = 0;
    while (cursor < order.size()) {
      GradientBundle acc = GradientBundle::zeros_like(out.params);
      double step_loss = 0.0, step_er = 0.0;
      int micro_count = 0;
      for (int a = 0; a < config.accum_steps && cursor < order.size(); ++a) {
        std::vector<const CandidateRewards*> batch;
        for (int b = 0; b < config.batch_size && cursor < order.size(); ++b, ++cursor)
          batch.push_back(&tables[order[cursor]]);
        StepOutput so = config.algo == TrainConfig::Algo::RL
                            ? rl_step(batch, out.params, sample_rng)
                            : kd_step(batch, out.params, config.kd_temperature);
        acc.add_scaled(so.grads, 1.0);
        step_loss += so.loss;
        step_er += so.expected_reward;
        ++micro_count;
      }
      if (micro_count == 0) break;
      acc.scale(1.0 / double(micro_count));
      step_loss /= double(micro_count);
      step_er /= double(micro_count);
      if (!std::isfinite(step_loss)) throw Error("train: non-finite loss, aborting");
      adam_step(out.params, acc, state, step_cfg);
      ++global_step;
      ++epoch_steps;
      epoch_loss += step_loss;
      epoch_er += step_er;
      json rec;
      rec["step"] = global_step;
      rec["epoch"] = epoch;
      rec["loss"] = step_loss;
      rec["expected_reward"] = step_er;
      rec["lr"] = scheduled_lr(step_cfg, global_step);
      log_lines += rec.dump();
      log_lines += '\n';
    }

    EpochSummary es;
    es.epoch = epoch;
    es.mean_loss = epoch_steps ? epoch_loss / double(epoch_steps) : 0.0;
    es.mean_expected_reward = epoch_steps ? epoch_er / double(epoch_steps) : 0.0;
    out.epochs.push_back(es);
    char name[48];
    std::snprintf(name, sizeof(name), "ckpt-%s-epoch-%03d.bin", config.algo_name(), epoch);
    save_checkpoint(out_dir / name, out.params, &state);
  }

  out.final_checkpoint = out_dir / ("ckpt-" + std::string(config.algo_name()) + "-final.bin");
  save_checkpoint(out.final_checkpoint, out.params, &state);
  write_file(out_dir / ("train-log-" + std::string(config.algo_name()) + ".jsonl"), log_lines);
  return out;
}

}  // namespace lamplab
