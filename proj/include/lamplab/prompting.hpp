#pragma once

// Query generation and personalized prompt construction. Each task has a
// per-profile-entry template (PPEP) instantiated over document fields, an
// aggregation rule joining rendered entries with ", and ", and a query rule
// that strips the task's fixed instruction boilerplate from the input.

#include <map>
#include <string>
#include <vector>

#include "lamplab/common.hpp"
#include "lamplab/data.hpp"

namespace lamplab {

struct ScoredList;  // retrieval.hpp

enum class AipKind {
  Prepend,      // entries + connective + input
  TitleInject,  // entries spliced after the quoted paper title inside the input
};

enum class QueryRule {
  AfterColon,   // longest suffix after the final colon, else the full input
  FirstQuoted,  // first "..." segment, else the full input
  Full,
};

struct TaskTemplate {
  std::string ppep;                  // format string with {field} placeholders
  std::string joiner = ", and ";
  AipKind aip = AipKind::Prepend;
  std::string connective = ". ";     // between joined entries and the input
  QueryRule query_rule = QueryRule::AfterColon;
};

struct TemplateSet {
  std::map<TaskKind, TaskTemplate> by_task;
  int token_cap = 512;

  const TaskTemplate& of(TaskKind task) const {
    auto it = by_task.find(task);
    if (it == by_task.end())
      throw ConfigError(std::string("no template configured for task ") + task_name(task));
    return it->second;
  }

  static TemplateSet defaults() {
    TemplateSet t;
    t.by_task[TaskKind::CitationIdent] = {"\"{title}\"", ", and ", AipKind::TitleInject, ". ",
                                          QueryRule::FirstQuoted};
    t.by_task[TaskKind::MovieTag] = {"the tag for the movie: \"{description}\" is \"{tag}\"",
                                     ", and ", AipKind::Prepend, ". ", QueryRule::AfterColon};
    t.by_task[TaskKind::ProductRating] = {"{score} is the score for \"{text}\"", ", and ",
                                          AipKind::Prepend, ". ", QueryRule::AfterColon};
    t.by_task[TaskKind::NewsHeadline] = {"\"{title}\" is the title for \"{text}\"", ", and ",
                                         AipKind::Prepend, ". ", QueryRule::AfterColon};
    t.by_task[TaskKind::ScholarlyTitle] = {"\"{title}\" is the title for \"{abstract}\"", ", and ",
                                           AipKind::Prepend, ". Following the given patterns ",
                                           QueryRule::AfterColon};
    t.by_task[TaskKind::EmailSubject] = {"\"{title}\" is the title for \"{text}\"", ", and ",
                                         AipKind::Prepend, ". ", QueryRule::AfterColon};
    t.by_task[TaskKind::TweetParaphrase] = {"\"{text}\"", ", and ", AipKind::Prepend,
                                            " are written by a person. Following the given patterns ",
                                            QueryRule::AfterColon};
    t.by_task[TaskKind::Synthetic] = {"\"{text}\"", ", and ", AipKind::Prepend, ". ",
                                      QueryRule::AfterColon};
    return t;
  }

  // Overrides the defaults from a config file keyed by task name, e.g.
  //   {"scholarly_title": {"ppep": "...", "connective": "...", ...}}
  static TemplateSet load(const std::filesystem::path& path) {
    TemplateSet t = defaults();
    json j = json::parse(read_file(path));
    if (!j.is_object()) throw ConfigError("template file must hold one object keyed by task");
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == "token_cap") {
        t.token_cap = it.value().get<int>();
        continue;
      }
      auto task = parse_task(it.key());
      if (!task) throw ConfigError("template file: unknown task \"" + it.key() + "\"");
      TaskTemplate& tt = t.by_task[*task];
      const json& spec = it.value();
      if (spec.contains("ppep")) tt.ppep = spec["ppep"].get<std::string>();
      if (spec.contains("joiner")) tt.joiner = spec["joiner"].get<std::string>();
      if (spec.contains("connective")) tt.connective = spec["connective"].get<std::string>();
      if (spec.contains("aip")) {
        std::string a = spec["aip"].get<std::string>();
        if (a == "prepend") tt.aip = AipKind::Prepend;
        else if (a == "title_inject") tt.aip = AipKind::TitleInject;
        else throw ConfigError("template file: unknown aip rule \"" + a + "\"");
      }
      if (spec.contains("query")) {
        std::string q = spec["query"].get<std::string>();
        if (q == "after_colon") tt.query_rule = QueryRule::AfterColon;
        else if (q == "first_quoted") tt.query_rule = QueryRule::FirstQuoted;
        else if (q == "full") tt.query_rule = QueryRule::Full;
        else throw ConfigError("template file: unknown query rule \"" + q + "\"");
      }
    }
    return t;
  }
};

// ---------------------------------------------------------------------------
// Query generation.
// ---------------------------------------------------------------------------

inline std::string first_quoted_segment(const std::string& s) {
  size_t open = s.find('"');
  if (open == std::string::npos) return {};
  size_t close = s.find('"', open + 1);
  if (close == std::string::npos) return {};
  return s.substr(open + 1, close - open - 1);
}

inline std::string make_query(const TemplateSet& templates, const Instance& inst) {
  const TaskTemplate& tt = templates.of(inst.task);
  const std::string& input = inst.input_text;
  switch (tt.query_rule) {
    case QueryRule::Full:
      return input;
    case QueryRule::FirstQuoted: {
      std::string q = first_quoted_segment(input);
      if (!q.empty()) return q;
      break;
    }
    case QueryRule::AfterColon:
      break;
  }
  size_t colon = input.rfind(':');
  if (colon == std::string::npos) return input;
  size_t b = colon + 1;
  while (b < input.size() && std::isspace(static_cast<unsigned char>(input[b]))) ++b;
  if (b >= input.size()) return input;
  return input.substr(b);
}

// ---------------------------------------------------------------------------
// Document rendering: PPEP instantiation plus the date suffix.
// ---------------------------------------------------------------------------

inline std::string render_document(const TemplateSet& templates, const ProfileDocument& doc,
                                   TaskKind task) {
  const TaskTemplate& tt = templates.of(task);
  std::string out;
  out.reserve(tt.ppep.size() + 64);
  const std::string& fmt = tt.ppep;
  for (size_t i = 0; i < fmt.size();) {
    if (fmt[i] == '{') {
      size_t close = fmt.find('}', i + 1);
      if (close == std::string::npos) throw ConfigError("unterminated placeholder in template");
      std::string field = fmt.substr(i + 1, close - i - 1);
      const std::string* value = doc.field(field);
      if (!value)
        throw DataError("rendering error: document " + doc.doc_id + " has no field \"" + field +
                        "\"");
      out += *value;
      i = close + 1;
    } else {
      out.push_back(fmt[i]);
      ++i;
    }
  }
  const std::string* date = doc.field("date");
  if (date && !date->empty()) {
    out += " date: " + *date + ".";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompt assembly.
// ---------------------------------------------------------------------------

struct PromptParts {
  std::vector<std::string> entries;  // rendered docs, rank order, post-cap
  std::string prompt;
  int dropped_for_cap = 0;
};

inline std::string assemble_prompt(const TaskTemplate& tt, const std::vector<std::string>& entries,
                                   const std::string& input) {
  if (entries.empty()) return input;
  std::string joined;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (i > 0) joined += tt.joiner;
    joined += entries[i];
  }
  if (tt.aip == AipKind::TitleInject) {
    size_t open = input.find('"');
    size_t close = open == std::string::npos ? std::string::npos : input.find('"', open + 1);
    if (close != std::string::npos) {
      std::string out = input.substr(0, close + 1);
      out += ", and " + joined;
      out += input.substr(close + 1);
      return out;
    }
    // no quoted title to splice into; fall through to prepending
  }
  return joined + tt.connective + input;
}

inline size_t prompt_token_count(const std::string& s) { return split_tokens(s).size(); }

// Renders the retrieved documents in rank order and assembles the prompt,
// dropping whole trailing entries until the token cap holds. An empty
// retrieved list yields the input unchanged.
inline PromptParts build_prompt_parts(const TemplateSet& templates, const Instance& inst,
                                      const std::vector<std::string>& retrieved_doc_ids) {
  const TaskTemplate& tt = templates.of(inst.task);
  PromptParts parts;
  for (const auto& doc_id : retrieved_doc_ids) {
    const ProfileDocument* doc = inst.user->find(doc_id);
    if (!doc)
      throw DataError("build_prompt: doc " + doc_id + " not in profile of instance " +
                      inst.instance_id);
    parts.entries.push_back(render_document(templates, *doc, inst.task));
  }
  parts.prompt = assemble_prompt(tt, parts.entries, inst.input_text);
  while (!parts.entries.empty() &&
         prompt_token_count(parts.prompt) > size_t(templates.token_cap)) {
    parts.entries.pop_back();
    parts.dropped_for_cap += 1;
    parts.prompt = assemble_prompt(tt, parts.entries, inst.input_text);
  }
  return parts;
}

}  // namespace lamplab
