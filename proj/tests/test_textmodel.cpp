#include <doctest.h>

#include <filesystem>
#include <set>

#include "lamplab/textmodel.hpp"

using namespace lamplab;

namespace {

Vocabulary toy_vocab() {
  return Vocabulary::build({"the cat sat", "dog ran far", "cat dog bird", "sun moon star"});
}

ScorerParams toy_params(int dim, uint64_t seed, bool head = false) {
  return ScorerParams::init(toy_vocab(), dim, seed, head);
}

// Central finite difference of an arbitrary scalar function of the params.
template <class F>
GradientBundle finite_difference(ScorerParams& p, F&& f, double eps = 1e-5) {
  GradientBundle g = GradientBundle::zeros_like(p);
  for (size_t i = 0; i < p.embeddings.size(); ++i) {
    double keep = p.embeddings[i];
    p.embeddings[i] = keep + eps;
    double hi = f(p);
    p.embeddings[i] = keep - eps;
    double lo = f(p);
    p.embeddings[i] = keep;
    g.embeddings[i] = (hi - lo) / (2 * eps);
  }
  if (p.head) {
    for (size_t i = 0; i < p.head->w.size(); ++i) {
      double keep = p.head->w[i];
      p.head->w[i] = keep + eps;
      double hi = f(p);
      p.head->w[i] = keep - eps;
      double lo = f(p);
      p.head->w[i] = keep;
      g.head_w[i] = (hi - lo) / (2 * eps);
    }
    double keep = p.head->bias;
    p.head->bias = keep + eps;
    double hi = f(p);
    p.head->bias = keep - eps;
    double lo = f(p);
    p.head->bias = keep;
    g.head_bias = (hi - lo) / (2 * eps);
  }
  return g;
}

double max_rel_err(const GradientBundle& a, const GradientBundle& b) {
  double worst = 0.0;
  auto upd = [&](double x, double y) {
    double denom = std::max(std::abs(x) + std::abs(y), 1e-6);
    worst = std::max(worst, std::abs(x - y) / denom);
  };
  for (size_t i = 0; i < a.embeddings.size(); ++i) upd(a.embeddings[i], b.embeddings[i]);
  for (size_t i = 0; i < a.head_w.size(); ++i) upd(a.head_w[i], b.head_w[i]);
  upd(a.head_bias, b.head_bias);
  return worst;
}

}  // namespace

TEST_CASE("tokenize maps through the vocabulary with unknown id 0") {
  Vocabulary v = toy_vocab();
  auto ids = v.tokenize("The cat, sat.");
  REQUIRE(ids.size() == 3);
  CHECK(ids[0] == v.id_of("the"));
  CHECK(ids[1] == v.id_of("cat"));
  CHECK(ids[2] == v.id_of("sat"));
  CHECK(v.tokenize("").empty());
  CHECK(v.tokenize("Zyzzyva!") == std::vector<int>{0});
}

TEST_CASE("vocabulary ids are dense and idf is higher for rarer tokens") {
  Vocabulary v = toy_vocab();
  std::set<int> ids;
  for (const auto& [tok, id] : v.ids) {
    (void)tok;
    ids.insert(id);
  }
  CHECK(int(ids.size()) == v.size() - 1);
  CHECK(*ids.begin() == 1);
  CHECK(*ids.rbegin() == v.size() - 1);
  // "cat" appears in two docs, "sun" in one
  CHECK(v.idf[size_t(v.id_of("sun"))] > v.idf[size_t(v.id_of("cat"))]);
}

TEST_CASE("encode: mean pooling basics") {
  ScorerParams p = toy_params(4, 11);
  auto one = encode(p, "cat");
  auto row = p.row(p.vocab.id_of("cat"));
  for (int c = 0; c < 4; ++c) CHECK(one[size_t(c)] == doctest::Approx(row[size_t(c)]));

  auto rep = encode(p, "cat cat");
  for (int c = 0; c < 4; ++c) CHECK(rep[size_t(c)] == doctest::Approx(one[size_t(c)]));

  // hand-computed mean of two rows
  auto two = encode(p, "cat dog");
  auto rc = p.row(p.vocab.id_of("cat"));
  auto rd = p.row(p.vocab.id_of("dog"));
  for (int c = 0; c < 4; ++c)
    CHECK(two[size_t(c)] == doctest::Approx(0.5 * (rc[size_t(c)] + rd[size_t(c)])));

  auto empty = encode(p, "");
  for (double x : empty) CHECK(x == 0.0);
}

TEST_CASE("encode is order invariant") {
  ScorerParams p = toy_params(8, 3);
  auto a = encode(p, "cat dog bird");
  auto b = encode(p, "bird cat dog");
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]));
}

TEST_CASE("score_pair: zero on empty sides, norm on identical token, closed form") {
  ScorerParams p = toy_params(4, 11);
  CHECK(score_pair(p, "", "cat") == 0.0);
  CHECK(score_pair(p, "cat", "") == 0.0);

  auto r = p.row(p.vocab.id_of("cat"));
  double norm2 = 0.0;
  for (double x : r) norm2 += x * x;
  CHECK(score_pair(p, "cat", "cat") == doctest::Approx(norm2));

  // toy 2-d embeddings q=(1,0), doc=(0.5,2) -> 0.5
  ScorerParams toy;
  toy.vocab = Vocabulary::build({"q d"});
  toy.dim = 2;
  toy.embeddings.assign(size_t(toy.vocab.size()) * 2, 0.0);
  toy.row(toy.vocab.id_of("q"))[0] = 1.0;
  toy.row(toy.vocab.id_of("q"))[1] = 0.0;
  toy.row(toy.vocab.id_of("d"))[0] = 0.5;
  toy.row(toy.vocab.id_of("d"))[1] = 2.0;
  CHECK(score_pair(toy, "q", "d") == doctest::Approx(0.5));
}

TEST_CASE("score_pair is symmetric") {
  ScorerParams p = toy_params(16, 21);
  Rng rng(77);
  std::vector<std::string> words{"the", "cat", "sat", "dog", "ran", "far", "bird", "sun"};
  for (int trial = 0; trial < 50; ++trial) {
    std::string a, b;
    for (int i = 0; i < 3; ++i) a += words[rng.below(words.size())] + " ";
    for (int i = 0; i < 4; ++i) b += words[rng.below(words.size())] + " ";
    CHECK(score_pair(p, a, b) == doctest::Approx(score_pair(p, b, a)).epsilon(1e-12));
  }
}

TEST_CASE("head_score: bias-only cases and closed form") {
  ScorerParams p = toy_params(2, 9, true);
  p.head->bias = 3.25;
  CHECK(head_score(p, "cat dog") == doctest::Approx(3.25));  // zero head weights
  CHECK(head_score(p, "") == doctest::Approx(3.25));         // empty text -> bias

  p.head->w = {1.0, 1.0};
  p.head->bias = 0.0;
  auto rc = p.row(p.vocab.id_of("cat"));
  rc[0] = 0.2;
  rc[1] = 0.3;
  auto rd = p.row(p.vocab.id_of("dog"));
  rd[0] = 0.3;
  rd[1] = 1.2;
  // encoding of "cat dog" = (0.25, 0.75), head (1,1) -> 1.0
  CHECK(head_score(p, "cat dog") == doctest::Approx(1.0));

  ScorerParams no_head = toy_params(2, 9, false);
  CHECK_THROWS_AS(head_score(no_head, "cat"), ConfigError);
}

TEST_CASE("backprop: zero upstream gives zero bundle") {
  ScorerParams p = toy_params(4, 31);
  auto g = backprop_scores(p, {ScoreInput::pair("cat", "dog ran")}, {0.0});
  for (double x : g.embeddings) CHECK(x == 0.0);
}

TEST_CASE("backprop matches finite differences for score_pair") {
  ScorerParams p = toy_params(5, 13);
  std::string q = "cat dog", d = "dog ran far";
  auto analytic = backprop_scores(p, {ScoreInput::pair(q, d)}, {1.0});
  auto fd = finite_difference(p, [&](const ScorerParams& pp) { return score_pair(pp, q, d); });
  CHECK(max_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("backprop: token shared by query and doc sums both pathways") {
  ScorerParams p = toy_params(5, 17);
  std::string q = "cat sun", d = "cat moon";  // "cat" on both sides
  auto analytic = backprop_scores(p, {ScoreInput::pair(q, d)}, {1.0});
  auto fd = finite_difference(p, [&](const ScorerParams& pp) { return score_pair(pp, q, d); });
  CHECK(max_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("backprop matches finite differences for head_score") {
  ScorerParams p = toy_params(6, 19, true);
  Rng rng(4);
  for (double& w : p.head->w) w = rng.uniform(-0.5, 0.5);
  p.head->bias = 0.1;
  std::string text = "cat dog bird";
  auto analytic = backprop_scores(p, {ScoreInput::head(text)}, {1.0});
  auto fd = finite_difference(p, [&](const ScorerParams& pp) { return head_score(pp, text); });
  CHECK(max_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("backprop is additive across inputs") {
  ScorerParams p = toy_params(4, 23);
  auto g1 = backprop_scores(p, {ScoreInput::pair("cat", "dog")}, {0.7});
  auto g2 = backprop_scores(p, {ScoreInput::pair("sun", "moon star")}, {-0.3});
  auto both = backprop_scores(
      p, {ScoreInput::pair("cat", "dog"), ScoreInput::pair("sun", "moon star")}, {0.7, -0.3});
  for (size_t i = 0; i < both.embeddings.size(); ++i)
    CHECK(both.embeddings[i] == doctest::Approx(g1.embeddings[i] + g2.embeddings[i]));
}

TEST_CASE("backprop rejects shape mismatch") {
  ScorerParams p = toy_params(4, 23);
  CHECK_THROWS_AS(backprop_scores(p, {ScoreInput::pair("a", "b")}, {1.0, 2.0}), Error);
}

TEST_CASE("adam: zero gradients leave parameters unchanged, counter advances") {
  ScorerParams p = toy_params(4, 29);
  ScorerParams before = p;
  AdamState st = AdamState::zeros_like(p);
  StepConfig cfg;
  cfg.total_steps = 10;
  adam_step(p, GradientBundle::zeros_like(p), st, cfg);
  CHECK(st.step == 1);
  CHECK(p.embeddings == before.embeddings);
}

TEST_CASE("adam: global clipping rescales to the clip norm") {
  ScorerParams p = toy_params(4, 29);
  GradientBundle g = GradientBundle::zeros_like(p);
  // norm 10 before clipping
  double per = 10.0 / std::sqrt(double(g.embeddings.size()));
  for (double& x : g.embeddings) x = per;
  CHECK(std::sqrt(g.squared_norm()) == doctest::Approx(10.0));
  GradientBundle clipped = g;
  double norm = std::sqrt(clipped.squared_norm());
  clipped.scale(1.0 / norm);
  CHECK(std::abs(std::sqrt(clipped.squared_norm()) - 1.0) < 1e-9);
}

TEST_CASE("adam: warmup scales the learning rate linearly") {
  StepConfig cfg;
  cfg.base_lr = 1e-5;
  cfg.total_steps = 1000;
  cfg.warmup_frac = 0.05;
  // at step = 1% of total: lr = base * (10 / 50) = 2e-6
  CHECK(scheduled_lr(cfg, 10) == doctest::Approx(2e-6));
  CHECK(scheduled_lr(cfg, 50) == doctest::Approx(1e-5));
  CHECK(scheduled_lr(cfg, 1000) == doctest::Approx(0.0));
  // decay midpoint
  CHECK(scheduled_lr(cfg, 525) == doctest::Approx(0.5e-5));
}

TEST_CASE("adam: identical inputs give identical updates") {
  ScorerParams p1 = toy_params(4, 41), p2 = toy_params(4, 41);
  AdamState s1 = AdamState::zeros_like(p1), s2 = AdamState::zeros_like(p2);
  GradientBundle g = GradientBundle::zeros_like(p1);
  Rng rng(6);
  for (double& x : g.embeddings) x = rng.uniform(-1, 1);
  StepConfig cfg;
  cfg.total_steps = 5;
  adam_step(p1, g, s1, cfg);
  adam_step(p2, g, s2, cfg);
  CHECK(p1.embeddings == p2.embeddings);
}

TEST_CASE("adam rejects non-finite gradients") {
  ScorerParams p = toy_params(4, 43);
  AdamState st = AdamState::zeros_like(p);
  GradientBundle g = GradientBundle::zeros_like(p);
  g.embeddings[0] = std::numeric_limits<double>::quiet_NaN();
  StepConfig cfg;
  cfg.total_steps = 5;
  CHECK_THROWS_AS(adam_step(p, g, st, cfg), Error);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  namespace fs = std::filesystem;
  ScorerParams p = toy_params(6, 47, true);
  Rng rng(12);
  for (double& w : p.head->w) w = rng.uniform(-2, 2);
  p.head->bias = -0.75;
  AdamState st = AdamState::zeros_like(p);
  for (double& m : st.m_emb) m = rng.uniform(-1, 1);
  st.step = 17;

  fs::path tmp = fs::temp_directory_path() / "lamplab-test-ckpt.bin";
  save_checkpoint(tmp, p, &st);
  Checkpoint ck = load_checkpoint(tmp);
  REQUIRE(ck.opt_state.has_value());
  CHECK(ck.params.embeddings == p.embeddings);
  CHECK(ck.params.head->w == p.head->w);
  CHECK(ck.opt_state->m_emb == st.m_emb);
  CHECK(ck.opt_state->step == 17);

  std::string first = serialize_checkpoint(p, &st);
  std::string second = serialize_checkpoint(ck.params, &*ck.opt_state);
  CHECK(first == second);
  fs::remove(tmp);
}
