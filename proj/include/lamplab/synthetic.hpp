#pragma once

// Planted synthetic benchmark. Every instance asks for the payload token
// bound to a marker token, and the profile is constructed so that exactly one
// retrieval strategy reaches the one document that answers it:
//
//   bm25-best    the useful doc shares the query marker literally and is kept
//                out of the recency window;
//   recency-best the newest doc is useful, while older decoys repeat the
//                marker (with higher term frequency and lower doc ids, so
//                term matching prefers them) but carry wrong answers;
//   dense-best   the useful doc uses a synonym of the marker from a generated
//                table, lexically disjoint from it, so only a scorer that has
//                learned the pairing finds it;
//   none-best    the answer is inline in the input and every profile doc is a
//                distractor.
//
// Token shapes are fixed so the oracle generator can parse prompts without
// side channels beyond the synonym table: m### markers, s### synonyms, p###
// payloads, w## wrong answers carried by misleading documents, and n##/j##
// profile filler.

#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lamplab/common.hpp"
#include "lamplab/data.hpp"

namespace lamplab {

struct SyntheticSpec {
  int num_users = 100;      // one instance per user
  int profile_size = 8;
  int marker_vocab_size = 24;
  int payload_vocab_size = 24;
  std::map<PlantedKind, double> best_retriever_mix = {
      {PlantedKind::Bm25, 0.3},
      {PlantedKind::Recency, 0.2},
      {PlantedKind::Dense, 0.3},
      {PlantedKind::None, 0.2},
  };
  uint64_t seed = 1;

  void validate() const {
    if (num_users < 1 || profile_size < 1 || marker_vocab_size < 1 || payload_vocab_size < 1)
      throw ConfigError("synthetic spec: all counts must be >= 1");
    if (marker_vocab_size < 2)
      throw ConfigError("synthetic spec: marker_vocab_size must be >= 2 (decoys need markers "
                        "distinct from the instance marker)");
    if (profile_size < 8)
      throw ConfigError("synthetic spec: profile_size must be >= 8 (the planted constructions "
                        "need four decoy slots outside the recency window)");
    double sum = 0.0;
    for (const auto& [k, f] : best_retriever_mix) {
      (void)k;
      if (f < 0) throw ConfigError("synthetic spec: negative mix fraction");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw ConfigError("synthetic spec: mix fractions must sum to 1");
  }
};

struct SynonymTable {
  std::map<std::string, std::string> syn_to_marker;

  const std::string* marker_for(const std::string& syn) const {
    auto it = syn_to_marker.find(syn);
    return it == syn_to_marker.end() ? nullptr : &it->second;
  }

  json to_json() const {
    json j = json::object();
    for (const auto& [s, m] : syn_to_marker) j[s] = m;
    return j;
  }

  static SynonymTable from_json(const json& j) {
    SynonymTable t;
    for (auto it = j.begin(); it != j.end(); ++it)
      t.syn_to_marker[it.key()] = it.value().get<std::string>();
    return t;
  }
};

struct SyntheticData {
  Dataset dataset;
  SynonymTable synonyms;
};

namespace synth_detail {

inline std::string tok(const char* prefix, int i, int width) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, i);
  return std::string(buf);
}

constexpr int kWrongVocab = 8;
constexpr int kNoiseVocab = 8;  // filler inside recency-kind profiles
constexpr int kJunkVocab = 8;   // filler inside bm25/dense-kind profiles
// Epoch day of 2020-06-28; per-doc dates step back one day per recency rank.
constexpr int64_t kBaseDay = 18441;

}  // namespace synth_detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  using synth_detail::tok;
  spec.validate();

  SyntheticData out;
  out.dataset.task = TaskKind::Synthetic;
  for (int i = 0; i < spec.marker_vocab_size; ++i)
    out.synonyms.syn_to_marker[tok("s", i, 3)] = tok("m", i, 3);

  // Largest-remainder apportionment of instance kinds, then a seeded shuffle.
  const PlantedKind kind_order[4] = {PlantedKind::None, PlantedKind::Recency, PlantedKind::Bm25,
                                     PlantedKind::Dense};
  int n = spec.num_users;
  int counts[4] = {0, 0, 0, 0};
  double remainders[4] = {0, 0, 0, 0};
  int assigned = 0;
  for (int k = 0; k < 4; ++k) {
    auto it = spec.best_retriever_mix.find(kind_order[k]);
    double f = it == spec.best_retriever_mix.end() ? 0.0 : it->second;
    double exact = f * n;
    counts[k] = int(exact);
    remainders[k] = exact - double(counts[k]);
    assigned += counts[k];
  }
  while (assigned < n) {
    int best = 0;
    for (int k = 1; k < 4; ++k)
      if (remainders[k] > remainders[best]) best = k;
    counts[best] += 1;
    remainders[best] = -1.0;
    assigned += 1;
  }
  std::vector<PlantedKind> kinds;
  kinds.reserve(size_t(n));
  for (int k = 0; k < 4; ++k)
    for (int c = 0; c < counts[k]; ++c) kinds.push_back(kind_order[k]);
  Rng kind_rng = Rng::stream(spec.seed, "synth-kinds");
  kind_rng.shuffle(kinds);

  const int S = spec.profile_size;
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(spec.seed, "synth-inst-" + std::to_string(i));
    PlantedKind kind = kinds[size_t(i)];
    int mi = int(rng.below(uint64_t(spec.marker_vocab_size)));
    int pt = int(rng.below(uint64_t(spec.payload_vocab_size)));
    std::string marker = tok("m", mi, 3);
    std::string synonym = tok("s", mi, 3);
    std::string payload = tok("p", pt, 3);

    auto other_marker = [&]() {
      int x = int(rng.below(uint64_t(spec.marker_vocab_size - 1)));
      if (x >= mi) ++x;
      return tok("m", x, 3);
    };
    auto noise = [&]() { return tok("n", int(rng.below(synth_detail::kNoiseVocab)), 2); };
    auto junk = [&]() { return tok("j", int(rng.below(synth_detail::kJunkVocab)), 2); };
    auto wrong = [&]() { return tok("w", int(rng.below(synth_detail::kWrongVocab)), 2); };

    Instance inst;
    inst.instance_id = "syn-" + tok("", i, 5);
    inst.task = TaskKind::Synthetic;
    inst.planted_best = kind;
    inst.target = payload;
    inst.input_text = "classify: " + marker;
    if (kind == PlantedKind::None) inst.input_text += " " + payload;

    auto profile = std::make_shared<UserProfile>();
    profile->user_id = "u" + tok("", i, 5);
    // texts[j] is the doc placed at id rank j (doc ids sort in rank order).
    auto texts = std::vector<std::string>(size_t(S));
    auto ts_rank = std::vector<int>(size_t(S), -1);  // -1: no date field
    int useful_id_rank = -1;

    switch (kind) {
      case PlantedKind::Bm25: {
        // Without dates, recency falls back to doc-id order, so keeping the
        // useful doc out of the lowest four ids keeps it out of the recency
        // window too.
        useful_id_rank = 4 + int(rng.below(uint64_t(S - 4)));
        for (int j = 0; j < S; ++j)
          texts[size_t(j)] =
              j == useful_id_rank ? marker + " " + payload : other_marker() + " " + junk();
        break;
      }
      case PlantedKind::Dense: {
        useful_id_rank = 4 + int(rng.below(uint64_t(S - 4)));
        for (int j = 0; j < S; ++j)
          texts[size_t(j)] =
              j == useful_id_rank ? synonym + " " + payload : other_marker() + " " + junk();
        break;
      }
      case PlantedKind::None: {
        // Distractors are dense with wrong-answer tokens: any retrieved entry
        // both fails the oracle and is surface-marked as misleading.
        for (int j = 0; j < S; ++j)
          texts[size_t(j)] = other_marker() + " " + wrong() + " " + wrong() + " " + wrong();
        break;
      }
      case PlantedKind::Recency: {
        // id ranks 0..3: old marker decoys (term frequency 2 beats the useful
        // doc under BM25); id rank S-1: the useful doc, which is the newest.
        useful_id_rank = S - 1;
        texts[size_t(S - 1)] = marker + " " + payload;
        ts_rank[size_t(S - 1)] = 0;
        for (int j = 0; j < 4; ++j) {
          texts[size_t(j)] = marker + " " + marker + " " + wrong();
          ts_rank[size_t(j)] = S - 4 + j;
        }
        int next_ts = 1;
        for (int j = 4; j < S - 1; ++j) {
          texts[size_t(j)] = other_marker() + " " + noise();
          ts_rank[size_t(j)] = next_ts++;
        }
        break;
      }
    }

    for (int j = 0; j < S; ++j) {
      ProfileDocument doc;
      doc.doc_id = profile->user_id + "-d" + tok("", j, 2);
      doc.fields["text"] = texts[size_t(j)];
      if (ts_rank[size_t(j)] >= 0) {
        std::string date = format_iso_date(synth_detail::kBaseDay - ts_rank[size_t(j)]);
        doc.fields["date"] = date;
        doc.timestamp = parse_iso8601_or_zero(date);
      }
      profile->docs.push_back(std::move(doc));
    }
    inst.user = profile;
    if (useful_id_rank >= 0)
      inst.useful_doc_id = profile->docs[size_t(useful_id_rank)].doc_id;
    out.dataset.instances.push_back(std::move(inst));
  }
  return out;
}

// Deterministic interleaved holdout: every k-th instance (by position) is
// held out for evaluation.
struct DatasetSplit {
  Dataset train;
  Dataset eval;
};

inline DatasetSplit split_dataset(const Dataset& ds, double holdout_fraction) {
  DatasetSplit sp;
  sp.train.task = sp.eval.task = ds.task;
  if (holdout_fraction <= 0.0) {
    sp.train = ds;
    return sp;
  }
  int period = std::max(2, int(1.0 / holdout_fraction + 0.5));
  for (size_t i = 0; i < ds.instances.size(); ++i) {
    if (int(i % size_t(period)) == period - 1)
      sp.eval.instances.push_back(ds.instances[i]);
    else
      sp.train.instances.push_back(ds.instances[i]);
  }
  return sp;
}

}  // namespace lamplab
