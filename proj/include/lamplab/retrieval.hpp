#pragma once

// The retriever pool. Every retriever returns a ScoredList over one user
// profile: scores non-increasing, doc ids unique, ties broken by ascending
// doc id everywhere so runs are reproducible.

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lamplab/common.hpp"
#include "lamplab/data.hpp"
#include "lamplab/prompting.hpp"
#include "lamplab/textmodel.hpp"

namespace lamplab {

enum class RetrieverKind { None, Recency, BM25, DenseZeroShot, RopgRl, RopgKd };

constexpr int kPoolSize = 6;

inline const char* retriever_name(RetrieverKind k) {
  switch (k) {
    case RetrieverKind::None: return "none";
    case RetrieverKind::Recency: return "recency";
    case RetrieverKind::BM25: return "bm25";
    case RetrieverKind::DenseZeroShot: return "dense_zero_shot";
    case RetrieverKind::RopgRl: return "ropg_rl";
    case RetrieverKind::RopgKd: return "ropg_kd";
  }
  return "?";
}

inline std::optional<RetrieverKind> parse_retriever(std::string_view s) {
  std::string n = lowercase_trim(s);
  for (char& c : n)
    if (c == '-') c = '_';
  if (n == "none") return RetrieverKind::None;
  if (n == "recency") return RetrieverKind::Recency;
  if (n == "bm25") return RetrieverKind::BM25;
  if (n == "dense_zero_shot" || n == "dense" || n == "contriever")
    return RetrieverKind::DenseZeroShot;
  if (n == "ropg_rl") return RetrieverKind::RopgRl;
  if (n == "ropg_kd") return RetrieverKind::RopgKd;
  return std::nullopt;
}

struct ScoredList {
  RetrieverKind retriever = RetrieverKind::None;
  std::vector<std::pair<std::string, double>> items;  // (doc_id, score), sorted

  std::vector<std::string> doc_ids() const {
    std::vector<std::string> out;
    out.reserve(items.size());
    for (const auto& [id, s] : items) {
      (void)s;
      out.push_back(id);
    }
    return out;
  }
};

// Profile documents rendered once per instance for scoring; both BM25 and the
// dense retrievers score the rendered text, not raw fields.
struct RenderedProfile {
  const UserProfile* profile = nullptr;
  std::vector<std::string> texts;  // parallel to profile->docs

  static RenderedProfile make(const TemplateSet& templates, const UserProfile& profile,
                              TaskKind task) {
    RenderedProfile r;
    r.profile = &profile;
    r.texts.reserve(profile.docs.size());
    for (const auto& doc : profile.docs) r.texts.push_back(render_document(templates, doc, task));
    return r;
  }
};

namespace detail {

struct RankEntry {
  const std::string* doc_id;
  double score;
  int64_t timestamp;
};

inline void sort_by_score(std::vector<RankEntry>& v) {
  std::sort(v.begin(), v.end(), [](const RankEntry& a, const RankEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return *a.doc_id < *b.doc_id;
  });
}

inline void sort_by_recency(std::vector<RankEntry>& v) {
  std::sort(v.begin(), v.end(), [](const RankEntry& a, const RankEntry& b) {
    if (a.timestamp != b.timestamp) return a.timestamp > b.timestamp;
    return *a.doc_id < *b.doc_id;
  });
}

inline ScoredList take_top(std::vector<RankEntry>& entries, RetrieverKind kind, size_t k) {
  ScoredList out;
  out.retriever = kind;
  size_t take = std::min(k, entries.size());
  out.items.reserve(take);
  for (size_t i = 0; i < take; ++i) out.items.emplace_back(*entries[i].doc_id, entries[i].score);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BM25 (Okapi scoring with the non-negative idf variant, k1=1.5, b=0.75).
// ---------------------------------------------------------------------------

struct Bm25Index {
  const UserProfile* profile = nullptr;
  std::vector<std::map<std::string, int>> term_freqs;  // per doc
  std::vector<int> doc_lens;
  std::map<std::string, int> doc_freqs;
  double avg_len = 0.0;
  double k1 = 1.5;
  double b = 0.75;

  static Bm25Index build(const RenderedProfile& rendered) {
    Bm25Index idx;
    idx.profile = rendered.profile;
    idx.term_freqs.reserve(rendered.texts.size());
    long long total_len = 0;
    for (const auto& text : rendered.texts) {
      std::map<std::string, int> tf;
      int len = 0;
      for (const auto& tok : split_tokens(text)) {
        tf[tok] += 1;
        len += 1;
      }
      for (const auto& [term, cnt] : tf) {
        (void)cnt;
        idx.doc_freqs[term] += 1;
      }
      idx.term_freqs.push_back(std::move(tf));
      idx.doc_lens.push_back(len);
      total_len += len;
    }
    idx.avg_len = rendered.texts.empty() ? 0.0 : double(total_len) / double(rendered.texts.size());
    return idx;
  }

  double idf(const std::string& term) const {
    auto it = doc_freqs.find(term);
    double df = it == doc_freqs.end() ? 0.0 : double(it->second);
    double n = double(term_freqs.size());
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
  }

  // Sum over query token occurrences; repeated query terms accumulate.
  double score(const std::vector<std::string>& query_tokens, size_t doc_index) const {
    const auto& tf = term_freqs[doc_index];
    double dl = double(doc_lens[doc_index]);
    double norm = avg_len > 0.0 ? (1.0 - b + b * dl / avg_len) : 1.0;
    double s = 0.0;
    for (const auto& term : query_tokens) {
      auto it = tf.find(term);
      if (it == tf.end()) continue;
      double f = double(it->second);
      s += idf(term) * (f * (k1 + 1.0)) / (f + k1 * norm);
    }
    return s;
  }
};

inline ScoredList bm25_retrieve(const Bm25Index& index, const std::string& query, int k) {
  if (k < 1) throw Error("bm25_retrieve: k must be >= 1");
  const UserProfile& profile = *index.profile;
  auto query_tokens = split_tokens(query);
  std::vector<detail::RankEntry> entries;
  entries.reserve(profile.docs.size());
  for (size_t i = 0; i < profile.docs.size(); ++i) {
    double s = query_tokens.empty() ? 0.0 : index.score(query_tokens, i);
    entries.push_back({&profile.docs[i].doc_id, s, profile.docs[i].timestamp});
  }
  if (query_tokens.empty()) {
    detail::sort_by_recency(entries);  // all-zero scores, recency-ordered
  } else {
    detail::sort_by_score(entries);
  }
  return detail::take_top(entries, RetrieverKind::BM25, size_t(k));
}

// ---------------------------------------------------------------------------
// Recency: timestamp descending, score of the rank-r document is 1/r.
// ---------------------------------------------------------------------------

inline ScoredList recency_retrieve(const UserProfile& profile, int k) {
  if (k < 1) throw Error("recency_retrieve: k must be >= 1");
  std::vector<detail::RankEntry> entries;
  entries.reserve(profile.docs.size());
  for (const auto& doc : profile.docs) entries.push_back({&doc.doc_id, 0.0, doc.timestamp});
  detail::sort_by_recency(entries);
  for (size_t i = 0; i < entries.size(); ++i) entries[i].score = 1.0 / double(i + 1);
  return detail::take_top(entries, RetrieverKind::Recency, size_t(k));
}

// ---------------------------------------------------------------------------
// Dense retrieval: exact scoring of every profile document, top-k by score.
// The zero-shot variant pools with idf weights; trained retrievers use the
// plain mean.
// ---------------------------------------------------------------------------

inline ScoredList dense_retrieve(const ScorerParams& params, const std::string& query,
                                 const RenderedProfile& rendered, int k,
                                 bool idf_pooling = false,
                                 RetrieverKind kind = RetrieverKind::DenseZeroShot) {
  if (k < 1) throw Error("dense_retrieve: k must be >= 1");
  const UserProfile& profile = *rendered.profile;
  auto q = idf_pooling ? encode_idf(params, query) : encode(params, query);
  std::vector<detail::RankEntry> entries;
  entries.reserve(profile.docs.size());
  for (size_t i = 0; i < profile.docs.size(); ++i) {
    auto d = idf_pooling ? encode_idf(params, rendered.texts[i]) : encode(params, rendered.texts[i]);
    entries.push_back({&profile.docs[i].doc_id, dot(q, d), profile.docs[i].timestamp});
  }
  detail::sort_by_score(entries);
  return detail::take_top(entries, kind, size_t(k));
}

inline ScoredList no_retrieval() { return ScoredList{RetrieverKind::None, {}}; }

// Full-profile score view used by query performance predictors: the None
// retriever exposes a zero score for every profile item.
inline ScoredList none_qpp_view(const UserProfile& profile) {
  ScoredList out;
  out.retriever = RetrieverKind::None;
  std::vector<detail::RankEntry> entries;
  for (const auto& doc : profile.docs) entries.push_back({&doc.doc_id, 0.0, doc.timestamp});
  detail::sort_by_score(entries);
  return detail::take_top(entries, RetrieverKind::None, entries.size());
}

// ---------------------------------------------------------------------------
// Prompt construction from a retrieval result.
// ---------------------------------------------------------------------------

inline PromptParts build_prompt_parts(const TemplateSet& templates, const Instance& inst,
                                      const ScoredList& retrieved) {
  return build_prompt_parts(templates, inst, retrieved.doc_ids());
}

inline std::string build_prompt(const TemplateSet& templates, const Instance& inst,
                                const ScoredList& retrieved) {
  return build_prompt_parts(templates, inst, retrieved).prompt;
}

// ---------------------------------------------------------------------------
// Line-oriented run format: instance_id doc_id rank score retriever_id
// ---------------------------------------------------------------------------

inline void append_run_lines(std::string& out, const std::string& instance_id,
                             const ScoredList& list) {
  for (size_t i = 0; i < list.items.size(); ++i) {
    char score_buf[32];
    std::snprintf(score_buf, sizeof(score_buf), "%.17g", list.items[i].second);
    out += instance_id;
    out += '\t';
    out += list.items[i].first;
    out += '\t';
    out += std::to_string(i + 1);
    out += '\t';
    out += score_buf;
    out += '\t';
    out += retriever_name(list.retriever);
    out += '\n';
  }
}

struct RunLine {
  std::string instance_id, doc_id;
  int rank;
  double score;
  std::string retriever;
};

inline std::vector<RunLine> parse_run_lines(const std::string& text) {
  std::vector<RunLine> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    RunLine r;
    if (!(ls >> r.instance_id >> r.doc_id >> r.rank >> r.score >> r.retriever))
      throw DataError("malformed run line: " + line);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace lamplab
