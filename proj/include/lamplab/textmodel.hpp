#pragma once

// The single trainable text scorer: token vocabulary, embedding table with
// mean pooling, dot-product pair scoring, an optional linear head for
// selection scoring, exact analytic gradients, and an Adam optimizer with
// linear warmup/decay and global-norm clipping.
//
// The architecture is deliberately small: every training algorithm in this
// project only requires a differentiable scorer, and a bag-of-embeddings
// model provides one with closed-form gradients.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lamplab/common.hpp"

namespace lamplab {

// ---------------------------------------------------------------------------
// Vocabulary. Id 0 is the catch-all unknown token; real tokens get dense ids
// starting at 1 in first-seen order, which makes construction deterministic.
// ---------------------------------------------------------------------------

struct Vocabulary {
  std::map<std::string, int> ids;
  std::vector<std::string> tokens{"<unk>"};
  // Corpus-level inverse document frequency per id, used by the zero-shot
  // pooling variant. idf[0] corresponds to never-seen tokens.
  std::vector<double> idf{1.0};

  int size() const { return int(tokens.size()); }

  int id_of(const std::string& tok) const {
    auto it = ids.find(tok);
    return it == ids.end() ? 0 : it->second;
  }

  std::vector<int> tokenize(std::string_view text) const {
    std::vector<int> out;
    for (const auto& tok : split_tokens(text)) out.push_back(id_of(tok));
    return out;
  }

  // Builds the vocabulary from a corpus of documents (min frequency 1) and
  // records document frequencies for the idf table.
  static Vocabulary build(const std::vector<std::string>& documents) {
    Vocabulary v;
    std::map<std::string, int> df;
    for (const auto& doc : documents) {
      std::map<std::string, bool> seen;
      for (const auto& tok : split_tokens(doc)) {
        if (v.ids.find(tok) == v.ids.end()) {
          v.ids.emplace(tok, v.size());
          v.tokens.push_back(tok);
        }
        if (!seen[tok]) {
          seen[tok] = true;
          df[tok] += 1;
        }
      }
    }
    double n = double(documents.size());
    v.idf.assign(size_t(v.size()), 0.0);
    v.idf[0] = std::log(n + 1.0) + 1.0;
    for (const auto& [tok, id] : v.ids) {
      v.idf[size_t(id)] = std::log((n + 1.0) / (double(df[tok]) + 1.0)) + 1.0;
    }
    return v;
  }
};

// ---------------------------------------------------------------------------
// Parameters and gradients.
// ---------------------------------------------------------------------------

struct HeadParams {
  std::vector<double> w;  // d entries
  double bias = 0.0;
};

struct ScorerParams {
  Vocabulary vocab;
  int dim = 64;
  std::vector<double> embeddings;  // |V| x dim, row-major
  std::optional<HeadParams> head;

  std::span<const double> row(int id) const {
    return {embeddings.data() + size_t(id) * size_t(dim), size_t(dim)};
  }
  std::span<double> row(int id) {
    return {embeddings.data() + size_t(id) * size_t(dim), size_t(dim)};
  }

  // Uniform init in [-0.5/d, 0.5/d]; the head (when present) starts at zero
  // so selection scores begin as pure ties.
  static ScorerParams init(Vocabulary vocab, int dim, uint64_t seed, bool with_head,
                           std::string_view stream_name = "scorer-init") {
    ScorerParams p;
    p.vocab = std::move(vocab);
    p.dim = dim;
    Rng rng = Rng::stream(seed, stream_name);
    double half = 0.5 / double(dim);
    p.embeddings.resize(size_t(p.vocab.size()) * size_t(dim));
    for (double& e : p.embeddings) e = rng.uniform(-half, half);
    if (with_head) {
      p.head = HeadParams{std::vector<double>(size_t(dim), 0.0), 0.0};
    }
    return p;
  }
};

struct GradientBundle {
  std::vector<double> embeddings;  // same shape as params.embeddings
  std::vector<double> head_w;      // empty if no head gradient
  double head_bias = 0.0;

  static GradientBundle zeros_like(const ScorerParams& p) {
    GradientBundle g;
    g.embeddings.assign(p.embeddings.size(), 0.0);
    if (p.head) g.head_w.assign(p.head->w.size(), 0.0);
    return g;
  }

  void add_scaled(const GradientBundle& other, double scale) {
    if (other.embeddings.size() != embeddings.size() || other.head_w.size() != head_w.size())
      throw Error("GradientBundle::add_scaled: shape mismatch");
    for (size_t i = 0; i < embeddings.size(); ++i) embeddings[i] += scale * other.embeddings[i];
    for (size_t i = 0; i < head_w.size(); ++i) head_w[i] += scale * other.head_w[i];
    head_bias += scale * other.head_bias;
  }

  void scale(double s) {
    for (double& v : embeddings) v *= s;
    for (double& v : head_w) v *= s;
    head_bias *= s;
  }

  double squared_norm() const {
    double n = 0.0;
    for (double v : embeddings) n += v * v;
    for (double v : head_w) n += v * v;
    n += head_bias * head_bias;
    return n;
  }

  bool finite() const {
    for (double v : embeddings)
      if (!std::isfinite(v)) return false;
    for (double v : head_w)
      if (!std::isfinite(v)) return false;
    return std::isfinite(head_bias);
  }
};

// ---------------------------------------------------------------------------
// Forward operations.
// ---------------------------------------------------------------------------

// Mean of token embeddings; empty token list gives the zero vector.
inline std::vector<double> encode(const ScorerParams& p, std::string_view text) {
  std::vector<double> out(size_t(p.dim), 0.0);
  auto ids = p.vocab.tokenize(text);
  if (ids.empty()) return out;
  for (int id : ids) {
    auto r = p.row(id);
    for (int c = 0; c < p.dim; ++c) out[size_t(c)] += r[size_t(c)];
  }
  double inv = 1.0 / double(ids.size());
  for (double& v : out) v *= inv;
  return out;
}

// idf-weighted pooling variant used by the zero-shot dense retriever: rare
// tokens dominate the pooled vector, so untrained embeddings already prefer
// literal term overlap.
inline std::vector<double> encode_idf(const ScorerParams& p, std::string_view text) {
  std::vector<double> out(size_t(p.dim), 0.0);
  auto ids = p.vocab.tokenize(text);
  if (ids.empty()) return out;
  double wsum = 0.0;
  for (int id : ids) {
    double w = p.vocab.idf[size_t(id)];
    wsum += w;
    auto r = p.row(id);
    for (int c = 0; c < p.dim; ++c) out[size_t(c)] += w * r[size_t(c)];
  }
  if (wsum > 0) {
    for (double& v : out) v /= wsum;
  }
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double score_pair(const ScorerParams& p, std::string_view query, std::string_view doc) {
  auto q = encode(p, query);
  auto d = encode(p, doc);
  return dot(q, d);
}

inline double score_pair_idf(const ScorerParams& p, std::string_view query, std::string_view doc) {
  auto q = encode_idf(p, query);
  auto d = encode_idf(p, doc);
  return dot(q, d);
}

inline double head_score(const ScorerParams& p, std::string_view text) {
  if (!p.head) throw ConfigError("head_score: scorer has no head parameters");
  auto e = encode(p, text);
  return dot(p.head->w, e) + p.head->bias;
}

// ---------------------------------------------------------------------------
// Backward pass. Inputs are either (query, doc) pairs scored by score_pair
// or single texts scored by head_score; `upstream` holds dLoss/dScore per
// input and the bundle accumulates additively across inputs.
// ---------------------------------------------------------------------------

struct ScoreInput {
  bool is_pair = true;
  std::string a;  // query text, or the head input text
  std::string b;  // doc text (pair mode only)

  static ScoreInput pair(std::string query, std::string doc) {
    return ScoreInput{true, std::move(query), std::move(doc)};
  }
  static ScoreInput head(std::string text) { return ScoreInput{false, std::move(text), {}}; }
};

inline GradientBundle backprop_scores(const ScorerParams& p,
                                      const std::vector<ScoreInput>& inputs,
                                      const std::vector<double>& upstream) {
  if (inputs.size() != upstream.size())
    throw Error("backprop_scores: inputs/upstream length mismatch");
  GradientBundle g = GradientBundle::zeros_like(p);
  for (size_t n = 0; n < inputs.size(); ++n) {
    double u = upstream[n];
    if (!std::isfinite(u)) throw Error("backprop_scores: non-finite upstream value");
    if (u == 0.0) continue;
    const ScoreInput& in = inputs[n];
    if (in.is_pair) {
      auto qa = p.vocab.tokenize(in.a);
      auto da = p.vocab.tokenize(in.b);
      if (qa.empty() || da.empty()) continue;  // score is identically 0
      auto qe = encode(p, in.a);
      auto de = encode(p, in.b);
      double qinv = u / double(qa.size());
      double dinv = u / double(da.size());
      // d(q.d)/dE_t = de * count_t(q)/|q| + qe * count_t(d)/|d|
      for (int id : qa) {
        auto gr = std::span<double>{g.embeddings.data() + size_t(id) * size_t(p.dim),
                                    size_t(p.dim)};
        for (int c = 0; c < p.dim; ++c) gr[size_t(c)] += qinv * de[size_t(c)];
      }
      for (int id : da) {
        auto gr = std::span<double>{g.embeddings.data() + size_t(id) * size_t(p.dim),
                                    size_t(p.dim)};
        for (int c = 0; c < p.dim; ++c) gr[size_t(c)] += dinv * qe[size_t(c)];
      }
    } else {
      if (!p.head) throw ConfigError("backprop_scores: head input without head parameters");
      auto ta = p.vocab.tokenize(in.a);
      auto te = encode(p, in.a);
      for (size_t c = 0; c < g.head_w.size(); ++c) g.head_w[c] += u * te[c];
      g.head_bias += u;
      if (!ta.empty()) {
        double tinv = u / double(ta.size());
        for (int id : ta) {
          auto gr = std::span<double>{g.embeddings.data() + size_t(id) * size_t(p.dim),
                                      size_t(p.dim)};
          for (int c = 0; c < p.dim; ++c) gr[size_t(c)] += tinv * p.head->w[size_t(c)];
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adam with linear warmup over the first `warmup_frac` of total steps, linear
// decay to zero afterwards, and global gradient-norm clipping.
// ---------------------------------------------------------------------------

struct StepConfig {
  double base_lr = 1e-5;
  long long total_steps = 1;
  double warmup_frac = 0.05;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m_emb, v_emb;
  std::vector<double> m_head, v_head;
  double m_bias = 0.0, v_bias = 0.0;
  long long step = 0;

  static AdamState zeros_like(const ScorerParams& p) {
    AdamState s;
    s.m_emb.assign(p.embeddings.size(), 0.0);
    s.v_emb.assign(p.embeddings.size(), 0.0);
    if (p.head) {
      s.m_head.assign(p.head->w.size(), 0.0);
      s.v_head.assign(p.head->w.size(), 0.0);
    }
    return s;
  }
};

inline double scheduled_lr(const StepConfig& cfg, long long step) {
  double total = double(cfg.total_steps);
  double warm = cfg.warmup_frac * total;
  double t = double(step);
  double lr;
  if (warm > 0.0 && t < warm) {
    lr = cfg.base_lr * (t / warm);
  } else if (total > warm) {
    lr = cfg.base_lr * (total - t) / (total - warm);
  } else {
    lr = cfg.base_lr;
  }
  return std::max(lr, 0.0);
}

inline void adam_step(ScorerParams& params, const GradientBundle& grads, AdamState& state,
                      const StepConfig& cfg) {
  if (grads.embeddings.size() != params.embeddings.size())
    throw Error("adam_step: gradient shape mismatch");
  if (params.head && grads.head_w.size() != params.head->w.size())
    throw Error("adam_step: head gradient shape mismatch");
  if (!grads.finite()) throw Error("adam_step: non-finite gradients, step rejected");

  GradientBundle g = grads;
  double norm = std::sqrt(g.squared_norm());
  if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) g.scale(cfg.clip_norm / norm);

  state.step += 1;
  double lr = scheduled_lr(cfg, state.step);
  double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));

  auto update = [&](double& p, double& m, double& v, double grad) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
    double mhat = m / bc1;
    double vhat = v / bc2;
    p -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  };

  for (size_t i = 0; i < params.embeddings.size(); ++i)
    update(params.embeddings[i], state.m_emb[i], state.v_emb[i], g.embeddings[i]);
  if (params.head) {
    for (size_t i = 0; i < params.head->w.size(); ++i)
      update(params.head->w[i], state.m_head[i], state.v_head[i], g.head_w[i]);
    update(params.head->bias, state.m_bias, state.v_bias, g.head_bias);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint container. Binary little-endian layout; doubles are stored as
// raw bit patterns so round-trips are bit-exact.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char(uint8_t(v >> (8 * i))));
}

inline void put_f64(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

inline void put_str(std::string& out, std::string_view s) {
  put_u64(out, s.size());
  out.append(s);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  uint64_t u64() {
    if (pos + 8 > buf.size()) throw DataError("checkpoint: truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[pos + size_t(i)])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string str() {
    uint64_t n = u64();
    if (pos + n > buf.size()) throw DataError("checkpoint: truncated string");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

struct Checkpoint {
  ScorerParams params;
  std::optional<AdamState> opt_state;
};

inline std::string serialize_checkpoint(const ScorerParams& params,
                                        const AdamState* opt_state) {
  using namespace detail;
  std::string out;
  out.append("LLCK");
  put_u64(out, 1);  // version
  put_u64(out, uint64_t(params.dim));
  put_u64(out, uint64_t(params.vocab.size()));
  for (const auto& t : params.vocab.tokens) put_str(out, t);
  for (double v : params.vocab.idf) put_f64(out, v);
  for (double v : params.embeddings) put_f64(out, v);
  put_u64(out, params.head ? 1 : 0);
  if (params.head) {
    for (double v : params.head->w) put_f64(out, v);
    put_f64(out, params.head->bias);
  }
  put_u64(out, opt_state ? 1 : 0);
  if (opt_state) {
    put_u64(out, uint64_t(opt_state->step));
    for (double v : opt_state->m_emb) put_f64(out, v);
    for (double v : opt_state->v_emb) put_f64(out, v);
    put_u64(out, opt_state->m_head.size());
    for (double v : opt_state->m_head) put_f64(out, v);
    for (double v : opt_state->v_head) put_f64(out, v);
    put_f64(out, opt_state->m_bias);
    put_f64(out, opt_state->v_bias);
  }
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const ScorerParams& params,
                            const AdamState* opt_state = nullptr) {
  write_file(path, serialize_checkpoint(params, opt_state));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::string buf = read_file(path);
  detail::Reader r{buf};
  if (buf.size() < 4 || buf.compare(0, 4, "LLCK") != 0)
    throw DataError("checkpoint: bad magic in " + path.string());
  r.pos = 4;
  uint64_t version = r.u64();
  if (version != 1) throw DataError("checkpoint: unsupported version");
  Checkpoint ck;
  ck.params.dim = int(r.u64());
  uint64_t vsize = r.u64();
  ck.params.vocab.tokens.clear();
  ck.params.vocab.ids.clear();
  for (uint64_t i = 0; i < vsize; ++i) {
    std::string tok = r.str();
    if (i > 0) ck.params.vocab.ids.emplace(tok, int(i));
    ck.params.vocab.tokens.push_back(std::move(tok));
  }
  ck.params.vocab.idf.resize(vsize);
  for (uint64_t i = 0; i < vsize; ++i) ck.params.vocab.idf[i] = r.f64();
  ck.params.embeddings.resize(vsize * uint64_t(ck.params.dim));
  for (double& v : ck.params.embeddings) v = r.f64();
  if (r.u64() == 1) {
    HeadParams h;
    h.w.resize(size_t(ck.params.dim));
    for (double& v : h.w) v = r.f64();
    h.bias = r.f64();
    ck.params.head = std::move(h);
  }
  if (r.u64() == 1) {
    AdamState s;
    s.step = (long long)(r.u64());
    s.m_emb.resize(ck.params.embeddings.size());
    for (double& v : s.m_emb) v = r.f64();
    s.v_emb.resize(ck.params.embeddings.size());
    for (double& v : s.v_emb) v = r.f64();
    uint64_t hn = r.u64();
    s.m_head.resize(hn);
    for (double& v : s.m_head) v = r.f64();
    s.v_head.resize(hn);
    for (double& v : s.v_head) v = r.f64();
    s.m_bias = r.f64();
    s.v_bias = r.f64();
    ck.opt_state = std::move(s);
  }
  return ck;
}

inline std::string checkpoint_digest(const std::filesystem::path& path) {
  return sha256_hex(read_file(path));
}

}  // namespace lamplab
