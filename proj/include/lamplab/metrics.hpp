#pragma once

// Downstream evaluation: accuracy, macro-F1, MAE/RMSE with the worst-case
// parse rule, ROUGE-1/ROUGE-L, the normalized ordinal reward, and the
// per-task Eval dispatcher that grades every generator output into [0,1].

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lamplab/common.hpp"
#include "lamplab/data.hpp"

namespace lamplab {

inline double accuracy(const std::vector<std::string>& golds,
                       const std::vector<std::string>& predictions) {
  if (golds.size() != predictions.size()) throw Error("accuracy: length mismatch");
  if (golds.empty()) return 0.0;
  int correct = 0;
  for (size_t i = 0; i < golds.size(); ++i)
    if (golds[i] == predictions[i]) ++correct;
  return double(correct) / double(golds.size());
}

// Macro-F1 over the task's full class set; classes with neither gold nor
// predicted occurrences contribute F1 = 0.
inline double f1_macro(const std::vector<std::string>& golds,
                       const std::vector<std::string>& predictions,
                       const std::vector<std::string>& classes) {
  if (golds.size() != predictions.size()) throw Error("f1_macro: length mismatch");
  if (classes.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& cls : classes) {
    int tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < golds.size(); ++i) {
      bool g = golds[i] == cls, p = predictions[i] == cls;
      if (g && p) ++tp;
      else if (!g && p) ++fp;
      else if (g && !p) ++fn;
    }
    double denom = 2.0 * tp + fp + fn;
    sum += denom > 0 ? 2.0 * tp / denom : 0.0;
  }
  return sum / double(classes.size());
}

// First contiguous digit run in the text, or nullopt.
inline std::optional<int> parse_first_int(std::string_view text) {
  size_t i = 0;
  while (i < text.size() && (text[i] < '0' || text[i] > '9')) ++i;
  if (i == text.size()) return std::nullopt;
  long v = 0;
  while (i < text.size() && text[i] >= '0' && text[i] <= '9') {
    v = std::min<long>(v * 10 + (text[i] - '0'), 1000000);
    ++i;
  }
  return int(v);
}

inline int parse_rating(std::string_view text, bool* ok = nullptr) {
  auto v = parse_first_int(text);
  if (ok) *ok = v.has_value();
  if (!v) return 0;
  return std::clamp(*v, 1, 5);
}

// Ordinal predictions are parsed with the rating rule; an unparsable
// prediction contributes the worst achievable error for its gold.
inline double mae(const std::vector<double>& golds, const std::vector<std::string>& preds) {
  if (golds.size() != preds.size()) throw Error("mae: length mismatch");
  if (golds.empty()) return 0.0;
  double sum = 0.0;
  for (size_t i = 0; i < golds.size(); ++i) {
    bool ok = false;
    int p = parse_rating(preds[i], &ok);
    double err = ok ? std::abs(golds[i] - double(p))
                    : std::max(std::abs(1.0 - golds[i]), std::abs(5.0 - golds[i]));
    sum += err;
  }
  return sum / double(golds.size());
}

inline double rmse(const std::vector<double>& golds, const std::vector<std::string>& preds) {
  if (golds.size() != preds.size()) throw Error("rmse: length mismatch");
  if (golds.empty()) return 0.0;
  double sum = 0.0;
  for (size_t i = 0; i < golds.size(); ++i) {
    bool ok = false;
    int p = parse_rating(preds[i], &ok);
    double err = ok ? std::abs(golds[i] - double(p))
                    : std::max(std::abs(1.0 - golds[i]), std::abs(5.0 - golds[i]));
    sum += err * err;
  }
  return std::sqrt(sum / double(golds.size()));
}

// ---------------------------------------------------------------------------
// ROUGE-1 / ROUGE-L (F1 variants, shared tokenization, no stemming).
// Both sides empty scores 1; exactly one empty scores 0.
// ---------------------------------------------------------------------------

inline double rouge1(std::string_view reference, std::string_view candidate) {
  auto ref = split_tokens(reference);
  auto cand = split_tokens(candidate);
  if (ref.empty() && cand.empty()) return 1.0;
  if (ref.empty() || cand.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : ref) counts[t] += 1;
  int overlap = 0;
  for (const auto& t : cand) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      it->second -= 1;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  double p = double(overlap) / double(cand.size());
  double r = double(overlap) / double(ref.size());
  return 2.0 * p * r / (p + r);
}

inline size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double rougeL(std::string_view reference, std::string_view candidate) {
  auto ref = split_tokens(reference);
  auto cand = split_tokens(candidate);
  if (ref.empty() && cand.empty()) return 1.0;
  if (ref.empty() || cand.empty()) return 0.0;
  size_t lcs = lcs_length(ref, cand);
  if (lcs == 0) return 0.0;
  double p = double(lcs) / double(cand.size());
  double r = double(lcs) / double(ref.size());
  return 2.0 * p * r / (p + r);
}

// ---------------------------------------------------------------------------
// Normalized ordinal reward: distance of the absolute error from the worst
// error achievable for the gold rating, scaled into [0,1]. Unparsable
// predictions score 0.
// ---------------------------------------------------------------------------

inline double eval_ordinal_reward(int y, std::string_view prediction_text) {
  if (y < 1 || y > 5) throw Error("eval_ordinal_reward: gold rating out of range");
  bool ok = false;
  int yhat = parse_rating(prediction_text, &ok);
  if (!ok) return 0.0;
  double worst = std::max(std::abs(1.0 - y), std::abs(5.0 - y));
  return (worst - std::abs(double(y) - double(yhat))) / worst;
}

// ---------------------------------------------------------------------------
// Per-task dispatch, always in [0,1]. Classification tasks match normalized
// labels exactly; the ordinal task uses the normalized reward; generation
// tasks use ROUGE-1.
// ---------------------------------------------------------------------------

inline double eval_dispatch(TaskKind task, const std::string& gold, const std::string& output) {
  switch (task) {
    case TaskKind::CitationIdent:
    case TaskKind::MovieTag:
    case TaskKind::Synthetic:
      return lowercase_trim(gold) == lowercase_trim(output) ? 1.0 : 0.0;
    case TaskKind::ProductRating: {
      bool ok = false;
      int y = parse_rating(gold, &ok);
      if (!ok) throw DataError("ordinal gold is not a rating: " + gold);
      return eval_ordinal_reward(y, output);
    }
    case TaskKind::NewsHeadline:
    case TaskKind::ScholarlyTitle:
    case TaskKind::EmailSubject:
    case TaskKind::TweetParaphrase:
      return rouge1(gold, output);
  }
  throw Error("eval_dispatch: unknown task");
}

// ---------------------------------------------------------------------------
// Per-(instance, variant) outcome records, serialized as one json object per
// line in evaluation reports.
// ---------------------------------------------------------------------------

struct EvalOutcome {
  std::string instance_id;
  std::string variant;  // retriever id or doc id
  double score = 0.0;
  std::map<std::string, double> raw_metrics;

  json to_json() const {
    json j;
    j["instance_id"] = instance_id;
    j["variant"] = variant;
    j["score"] = score;
    if (!raw_metrics.empty()) {
      json m = json::object();
      for (const auto& [k, v] : raw_metrics) m[k] = v;
      j["raw"] = std::move(m);
    }
    return j;
  }
};

inline std::string outcomes_to_jsonl(const std::vector<EvalOutcome>& outcomes) {
  std::string out;
  for (const auto& o : outcomes) {
    out += o.to_json().dump();
    out += '\n';
  }
  return out;
}

}  // namespace lamplab
