#pragma once

// The language-model boundary: a deterministic oracle for synthetic runs, a
// remote HTTP client for real models, and a persistent prompt-keyed cache
// shared by both.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "lamplab/common.hpp"
#include "lamplab/data.hpp"
#include "lamplab/synthetic.hpp"

namespace lamplab {

struct GeneratorConfig {
  enum class Kind { Oracle, Remote };
  Kind kind = Kind::Oracle;
  std::string endpoint;  // remote only, e.g. http://127.0.0.1:8080/generate
  double timeout_s = 10.0;
  int retries = 2;
  std::string cache_dir;  // empty: in-memory cache only
  int max_output_tokens = 512;

  void validate() const {
    if (kind == Kind::Remote && endpoint.empty())
      throw ConfigError("generator: remote kind requires an endpoint");
    if (retries < 0) throw ConfigError("generator: retries must be >= 0");
  }

  const char* kind_name() const { return kind == Kind::Oracle ? "oracle" : "remote"; }
};

struct GenerationRecord {
  std::string prompt_hash;
  std::string prompt;
  std::string output;
  int64_t latency_ms = 0;
};

// ---------------------------------------------------------------------------
// Oracle generator. Parses the quoted profile entries out of a synthetic
// prompt; an entry whose marker matches the query marker (directly or through
// the synonym table) answers with its payload, a useful (p-vocabulary) entry
// winning over wrong-answer entries regardless of order. A prompt with
// entries but no match answers "unknown"; a prompt with no entries falls back
// to the inline answer carried by none-best inputs.
// ---------------------------------------------------------------------------

namespace oracle_detail {

inline bool is_class_token(const std::string& tok, char prefix) {
  if (tok.size() < 2 || tok[0] != prefix) return false;
  for (size_t i = 1; i < tok.size(); ++i)
    if (tok[i] < '0' || tok[i] > '9') return false;
  return true;
}

struct ParsedEntry {
  std::string marker;   // marker token, synonym-resolved; empty if none
  std::string payload;  // p- or w-token; empty if none
  bool payload_is_useful = false;
};

inline ParsedEntry parse_entry(const std::string& span, const SynonymTable& synonyms) {
  ParsedEntry e;
  for (const auto& tok : split_tokens(span)) {
    if (e.marker.empty()) {
      if (is_class_token(tok, 'm')) {
        e.marker = tok;
        continue;
      }
      if (is_class_token(tok, 's')) {
        if (const std::string* m = synonyms.marker_for(tok)) {
          e.marker = *m;
          continue;
        }
      }
    }
    if (e.payload.empty() && (is_class_token(tok, 'p') || is_class_token(tok, 'w'))) {
      e.payload = tok;
      e.payload_is_useful = tok[0] == 'p';
    }
  }
  return e;
}

}  // namespace oracle_detail

inline std::string oracle_generate(const std::string& prompt, const SynonymTable& synonyms) {
  using oracle_detail::is_class_token;
  // Quoted spans are the rendered profile entries; everything outside them is
  // template glue plus the task input.
  std::vector<std::string> spans;
  std::string outside;
  size_t pos = 0;
  while (pos < prompt.size()) {
    size_t open = prompt.find('"', pos);
    if (open == std::string::npos) {
      outside += prompt.substr(pos);
      break;
    }
    size_t close = prompt.find('"', open + 1);
    if (close == std::string::npos) {
      outside += prompt.substr(pos);
      break;
    }
    outside += prompt.substr(pos, open - pos);
    outside += ' ';
    spans.push_back(prompt.substr(open + 1, close - open - 1));
    pos = close + 1;
  }

  std::string query_marker, inline_answer;
  for (const auto& tok : split_tokens(outside)) {
    if (query_marker.empty() && is_class_token(tok, 'm')) query_marker = tok;
    if (inline_answer.empty() && (is_class_token(tok, 'p') || is_class_token(tok, 'w')))
      inline_answer = tok;
  }

  if (spans.empty()) {
    return inline_answer.empty() ? "unknown" : inline_answer;
  }
  // Entries present: only a marker match can answer; a retrieved-but-useless
  // profile drowns out any inline answer.
  std::string wrong_payload;
  for (const auto& span : spans) {
    auto entry = oracle_detail::parse_entry(span, synonyms);
    if (entry.marker.empty() || entry.marker != query_marker) continue;
    if (entry.payload.empty()) continue;
    if (entry.payload_is_useful) return entry.payload;
    if (wrong_payload.empty()) wrong_payload = entry.payload;
  }
  return wrong_payload.empty() ? "unknown" : wrong_payload;
}

// ---------------------------------------------------------------------------
// Prompt-keyed cache: one append-only jsonl file per two-hex-digit prefix of
// the prompt digest, loaded lazily.
// ---------------------------------------------------------------------------

class GenerationCache {
 public:
  explicit GenerationCache(std::string dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  bool get(const std::string& hash, std::string* output) {
    std::lock_guard<std::mutex> lock(mu_);
    ensure_loaded(hash);
    auto it = mem_.find(hash);
    if (it == mem_.end()) return false;
    *output = it->second;
    return true;
  }

  void put(const GenerationRecord& rec) {
    std::lock_guard<std::mutex> lock(mu_);
    ensure_loaded(rec.prompt_hash);
    if (mem_.count(rec.prompt_hash)) return;  // first writer wins
    mem_[rec.prompt_hash] = rec.output;
    if (dir_.empty()) return;
    json line;
    line["h"] = rec.prompt_hash;
    line["p"] = rec.prompt;
    line["o"] = rec.output;
    line["ms"] = rec.latency_ms;
    std::ofstream out(prefix_path(rec.prompt_hash), std::ios::app | std::ios::binary);
    out << line.dump() << '\n';
  }

 private:
  std::filesystem::path prefix_path(const std::string& hash) const {
    return std::filesystem::path(dir_) / (hash.substr(0, 2) + ".jsonl");
  }

  void ensure_loaded(const std::string& hash) {
    if (dir_.empty() || hash.size() < 2) return;
    std::string prefix = hash.substr(0, 2);
    if (loaded_.count(prefix)) return;
    loaded_.insert(prefix);
    std::ifstream in(prefix_path(hash));
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        json j = json::parse(line);
        mem_.emplace(j.at("h").get<std::string>(), j.at("o").get<std::string>());
      } catch (const nlohmann::json::exception&) {
        // torn tail writes are ignored; the record will be regenerated
      }
    }
  }

  std::string dir_;
  std::mutex mu_;
  std::map<std::string, std::string> mem_;
  std::set<std::string> loaded_;
};

// ---------------------------------------------------------------------------
// Generator front end.
// ---------------------------------------------------------------------------

class Generator {
 public:
  Generator(GeneratorConfig cfg, SynonymTable synonyms = {})
      : cfg_(std::move(cfg)), synonyms_(std::move(synonyms)), cache_(cfg_.cache_dir) {
    cfg_.validate();
  }

  const GeneratorConfig& config() const { return cfg_; }

  static std::string prompt_key(const GeneratorConfig& cfg, const std::string& prompt) {
    return sha256_hex(std::string(cfg.kind_name()) + "\n" + prompt);
  }

  // Cache-first generation; duplicate concurrent misses for the same key
  // collapse into a single backend call.
  std::string generate(const std::string& prompt) {
    std::string hash = prompt_key(cfg_, prompt);
    std::string output;
    if (cache_.get(hash, &output)) {
      hits_ += 1;
      return output;
    }

    std::shared_future<std::string> fut;
    bool owner = false;
    {
      std::lock_guard<std::mutex> lock(inflight_mu_);
      auto it = inflight_.find(hash);
      if (it == inflight_.end()) {
        std::promise<std::string> prom;
        fut = prom.get_future().share();
        inflight_.emplace(hash, fut);
        promises_.emplace(hash, std::move(prom));
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (!owner) return fut.get();

    try {
      auto t0 = std::chrono::steady_clock::now();
      if (cfg_.kind == GeneratorConfig::Kind::Oracle) {
        output = oracle_generate(prompt, synonyms_);
      } else {
        output = remote_generate(prompt, hash);
      }
      auto t1 = std::chrono::steady_clock::now();
      GenerationRecord rec;
      rec.prompt_hash = hash;
      rec.prompt = prompt;
      rec.output = output;
      rec.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count();
      cache_.put(rec);
      backend_calls_ += 1;
      settle(hash, output, nullptr);
      return output;
    } catch (...) {
      settle(hash, {}, std::current_exception());
      throw;
    }
  }

  long long cache_hits() const { return hits_; }
  long long backend_calls() const { return backend_calls_; }

 private:
  void settle(const std::string& hash, const std::string& value, std::exception_ptr err) {
    std::lock_guard<std::mutex> lock(inflight_mu_);
    auto pit = promises_.find(hash);
    if (pit != promises_.end()) {
      if (err)
        pit->second.set_exception(err);
      else
        pit->second.set_value(value);
      promises_.erase(pit);
    }
    inflight_.erase(hash);
  }

  std::string remote_generate(const std::string& prompt, const std::string& hash);

  GeneratorConfig cfg_;
  SynonymTable synonyms_;
  GenerationCache cache_;
  std::mutex inflight_mu_;
  std::map<std::string, std::shared_future<std::string>> inflight_;
  std::map<std::string, std::promise<std::string>> promises_;
  std::atomic<long long> hits_{0};
  std::atomic<long long> backend_calls_{0};
};

}  // namespace lamplab

// The HTTP client is kept in a separate include so oracle-only binaries do
// not pull the socket machinery in.
#include "lamplab/generator_remote.hpp"
