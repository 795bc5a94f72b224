#pragma once

// Data model and dataset ingestion. The on-disk layout mirrors the public
// LaMP benchmark: a questions file holding an array of
// {"id", "input", "profile": [{"id", "date", ...string fields}]} records and
// an outputs file holding {"task", "golds": [{"id", "output"}]}.

#include <cstdint>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lamplab/common.hpp"

namespace lamplab {

using json = nlohmann::ordered_json;

enum class TaskKind {
  CitationIdent,   // binary classification
  MovieTag,        // 15-class classification
  ProductRating,   // ordinal 1..5
  NewsHeadline,
  ScholarlyTitle,
  EmailSubject,
  TweetParaphrase,
  Synthetic,
};

inline const char* task_name(TaskKind t) {
  switch (t) {
    case TaskKind::CitationIdent: return "citation";
    case TaskKind::MovieTag: return "movie_tag";
    case TaskKind::ProductRating: return "product_rating";
    case TaskKind::NewsHeadline: return "news_headline";
    case TaskKind::ScholarlyTitle: return "scholarly_title";
    case TaskKind::EmailSubject: return "email_subject";
    case TaskKind::TweetParaphrase: return "tweet_paraphrase";
    case TaskKind::Synthetic: return "synthetic";
  }
  return "unknown";
}

inline std::optional<TaskKind> parse_task(std::string_view name) {
  std::string n = lowercase_trim(name);
  for (char& c : n)
    if (c == '-' || c == ' ') c = '_';
  if (n == "citation" || n == "lamp_1") return TaskKind::CitationIdent;
  if (n == "movie_tag" || n == "lamp_2") return TaskKind::MovieTag;
  if (n == "product_rating" || n == "lamp_3") return TaskKind::ProductRating;
  if (n == "news_headline" || n == "lamp_4") return TaskKind::NewsHeadline;
  if (n == "scholarly_title" || n == "lamp_5") return TaskKind::ScholarlyTitle;
  if (n == "email_subject" || n == "lamp_6") return TaskKind::EmailSubject;
  if (n == "tweet_paraphrase" || n == "lamp_7") return TaskKind::TweetParaphrase;
  if (n == "synthetic") return TaskKind::Synthetic;
  return std::nullopt;
}

inline bool is_generation_task(TaskKind t) {
  return t == TaskKind::NewsHeadline || t == TaskKind::ScholarlyTitle ||
         t == TaskKind::EmailSubject || t == TaskKind::TweetParaphrase;
}

// ---------------------------------------------------------------------------

struct ProfileDocument {
  std::string doc_id;
  std::map<std::string, std::string> fields;  // text, title, abstract, ... date
  int64_t timestamp = 0;                      // derived from fields["date"]

  const std::string* field(const std::string& name) const {
    auto it = fields.find(name);
    return it == fields.end() ? nullptr : &it->second;
  }
};

struct UserProfile {
  std::string user_id;
  std::vector<ProfileDocument> docs;

  const ProfileDocument* find(const std::string& doc_id) const {
    for (const auto& d : docs)
      if (d.doc_id == doc_id) return &d;
    return nullptr;
  }
};

// Which of the four retrieval strategies is planted as the winner for a
// synthetic instance.
enum class PlantedKind { None, Recency, Bm25, Dense };

inline const char* planted_name(PlantedKind k) {
  switch (k) {
    case PlantedKind::None: return "none";
    case PlantedKind::Recency: return "recency";
    case PlantedKind::Bm25: return "bm25";
    case PlantedKind::Dense: return "dense";
  }
  return "?";
}

inline std::optional<PlantedKind> parse_planted(std::string_view s) {
  std::string n = lowercase_trim(s);
  if (n == "none") return PlantedKind::None;
  if (n == "recency") return PlantedKind::Recency;
  if (n == "bm25") return PlantedKind::Bm25;
  if (n == "dense") return PlantedKind::Dense;
  return std::nullopt;
}

struct Instance {
  std::string instance_id;
  std::shared_ptr<UserProfile> user;
  std::string input_text;
  std::string target;
  TaskKind task = TaskKind::Synthetic;

  // Synthetic benchmark metadata (absent for ingested datasets).
  std::optional<PlantedKind> planted_best;
  std::string useful_doc_id;
};

struct Dataset {
  TaskKind task = TaskKind::Synthetic;
  std::vector<Instance> instances;
  int skipped_empty_profiles = 0;
};

// ---------------------------------------------------------------------------
// Ingestion.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string require_string(const json& rec, const char* key, const std::string& where) {
  auto it = rec.find(key);
  if (it == rec.end() || !it->is_string())
    throw DataError("schema violation in " + where + ": missing or non-string \"" + key + "\"");
  return it->get<std::string>();
}

}  // namespace detail

inline ProfileDocument parse_profile_entry(const json& rec, const std::string& where) {
  if (!rec.is_object()) throw DataError("schema violation in " + where + ": profile entry not an object");
  ProfileDocument doc;
  doc.doc_id = detail::require_string(rec, "id", where);
  for (auto it = rec.begin(); it != rec.end(); ++it) {
    if (it.key() == "id") continue;
    if (!it.value().is_string()) {
      // LaMP stores a handful of numeric fields (e.g. scores); normalize to string.
      if (it.value().is_number_integer()) {
        doc.fields[it.key()] = std::to_string(it.value().get<int64_t>());
        continue;
      }
      throw DataError("schema violation in " + where + ": field \"" + it.key() +
                      "\" of profile entry " + doc.doc_id + " is not a string");
    }
    doc.fields[it.key()] = it.value().get<std::string>();
  }
  if (const std::string* date = doc.field("date")) {
    doc.timestamp = parse_iso8601_or_zero(*date);
  }
  return doc;
}

inline Dataset load_dataset(const std::filesystem::path& questions_path,
                            const std::filesystem::path& outputs_path, TaskKind task) {
  json questions, outputs;
  try {
    questions = json::parse(read_file(questions_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("cannot parse questions file " + questions_path.string() + ": " + e.what());
  }
  try {
    outputs = json::parse(read_file(outputs_path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("cannot parse outputs file " + outputs_path.string() + ": " + e.what());
  }
  if (!questions.is_array())
    throw DataError("schema violation: questions file must contain one array of records");
  if (!outputs.is_object() || !outputs.contains("golds") || !outputs["golds"].is_array())
    throw DataError("schema violation: outputs file must be {\"task\", \"golds\": [...]}");
  if (outputs.contains("task") && outputs["task"].is_string()) {
    auto declared = parse_task(outputs["task"].get<std::string>());
    if (declared && *declared != task)
      throw DataError("outputs file declares task \"" + outputs["task"].get<std::string>() +
                      "\" but " + task_name(task) + " was requested");
  }

  std::map<std::string, std::string> gold_by_id;
  for (const auto& g : outputs["golds"]) {
    std::string id = detail::require_string(g, "id", "outputs gold record");
    gold_by_id[id] = detail::require_string(g, "output", "outputs gold record " + id);
  }

  // Id matching is strict in both directions before anything is materialized.
  std::vector<std::string> question_ids;
  for (const auto& rec : questions)
    question_ids.push_back(detail::require_string(rec, "id", "questions record"));
  {
    std::map<std::string, bool> qset;
    std::vector<std::string> unmatched;
    for (const auto& id : question_ids) {
      if (qset[id]) throw DataError("schema violation: duplicate question id " + id);
      qset[id] = true;
      if (!gold_by_id.count(id)) unmatched.push_back("question without gold: " + id);
    }
    for (const auto& [id, out] : gold_by_id) {
      (void)out;
      if (!qset.count(id)) unmatched.push_back("gold without question: " + id);
    }
    if (!unmatched.empty()) {
      std::string msg = "id mismatch between questions and outputs:";
      for (const auto& u : unmatched) msg += "\n  " + u;
      throw DataError(msg);
    }
  }

  Dataset ds;
  ds.task = task;
  for (const auto& rec : questions) {
    std::string id = rec["id"].get<std::string>();
    std::string input = detail::require_string(rec, "input", "questions record " + id);
    auto pit = rec.find("profile");
    if (pit == rec.end() || !pit->is_array())
      throw DataError("schema violation in questions record " + id + ": missing profile array");

    auto profile = std::make_shared<UserProfile>();
    profile->user_id = "u-" + id;
    std::map<std::string, bool> seen_docs;
    for (const auto& entry : *pit) {
      ProfileDocument doc = parse_profile_entry(entry, "questions record " + id);
      if (seen_docs[doc.doc_id])
        throw DataError("schema violation in questions record " + id + ": duplicate doc id " +
                        doc.doc_id);
      seen_docs[doc.doc_id] = true;
      profile->docs.push_back(std::move(doc));
    }

    if (profile->docs.empty()) {
      std::cerr << "warning: skipping instance " << id << " (empty profile)\n";
      ds.skipped_empty_profiles += 1;
      continue;
    }

    Instance inst;
    inst.instance_id = id;
    inst.user = profile;
    inst.input_text = input;
    inst.target = gold_by_id.at(id);
    inst.task = task;
    if (inst.target.empty()) throw DataError("schema violation: empty gold output for id " + id);
    if (inst.input_text.empty()) throw DataError("schema violation: empty input for id " + id);
    if (rec.contains("planted_best") && rec["planted_best"].is_string()) {
      inst.planted_best = parse_planted(rec["planted_best"].get<std::string>());
      if (rec.contains("useful_doc_id") && rec["useful_doc_id"].is_string())
        inst.useful_doc_id = rec["useful_doc_id"].get<std::string>();
    }
    ds.instances.push_back(std::move(inst));
  }
  return ds;
}

// Re-serializes a dataset into the questions/outputs layout it was loaded
// from. Field-for-field lossless for retained instances.
inline std::pair<json, json> serialize_dataset(const Dataset& ds) {
  json questions = json::array();
  json golds = json::array();
  for (const auto& inst : ds.instances) {
    json rec;
    rec["id"] = inst.instance_id;
    rec["input"] = inst.input_text;
    json profile = json::array();
    for (const auto& doc : inst.user->docs) {
      json entry;
      entry["id"] = doc.doc_id;
      for (const auto& [k, v] : doc.fields) entry[k] = v;
      profile.push_back(std::move(entry));
    }
    rec["profile"] = std::move(profile);
    if (inst.planted_best) {
      rec["planted_best"] = planted_name(*inst.planted_best);
      rec["useful_doc_id"] = inst.useful_doc_id;
    }
    questions.push_back(std::move(rec));
    json g;
    g["id"] = inst.instance_id;
    g["output"] = inst.target;
    golds.push_back(std::move(g));
  }
  json outputs;
  outputs["task"] = task_name(ds.task);
  outputs["golds"] = std::move(golds);
  return {std::move(questions), std::move(outputs)};
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& questions_path,
                         const std::filesystem::path& outputs_path) {
  auto [questions, outputs] = serialize_dataset(ds);
  write_file(questions_path, questions.dump(1) + "\n");
  write_file(outputs_path, outputs.dump(1) + "\n");
}

}  // namespace lamplab
