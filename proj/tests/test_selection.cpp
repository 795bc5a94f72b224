#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "lamplab/selection.hpp"

using namespace lamplab;
namespace fs = std::filesystem;

namespace {

SelectionExample example_with_evals(std::array<double, kPoolSize> evals,
                                    const std::string& id = "e0") {
  SelectionExample ex;
  ex.instance_id = id;
  ex.task = TaskKind::Synthetic;
  ex.target = "p000";
  ex.input_text = "classify: m000";
  for (size_t r = 0; r < kPoolSize; ++r) {
    ex.prompts[r] = ex.input_text;
    ex.outputs[r] = "p000";
  }
  ex.evals = evals;
  ex.has_outputs = true;
  return ex;
}

ScorerParams head_params(std::vector<std::string> corpus, int dim, uint64_t seed) {
  return ScorerParams::init(Vocabulary::build(corpus), dim, seed, true);
}

}  // namespace

TEST_CASE("target selection distribution: uniform on ties, closed form on one-hot") {
  auto uni = target_selection_distribution(example_with_evals({0.4, 0.4, 0.4, 0.4, 0.4, 0.4}));
  for (double v : uni) CHECK(v == doctest::Approx(1.0 / 6));

  auto hot = target_selection_distribution(example_with_evals({1, 0, 0, 0, 0, 0}));
  double e = std::exp(1.0);
  CHECK(hot[0] == doctest::Approx(e / (e + 5)).epsilon(1e-12));
  CHECK(hot[0] == doctest::Approx(0.3521).epsilon(1e-3));
  for (size_t i = 1; i < 6; ++i) CHECK(hot[i] == doctest::Approx(0.1296).epsilon(1e-3));

  // permuting the eval vector permutes the distribution identically
  auto base = target_selection_distribution(example_with_evals({0.9, 0.1, 0.5, 0.2, 0.7, 0.3}));
  auto perm = target_selection_distribution(example_with_evals({0.1, 0.9, 0.5, 0.2, 0.7, 0.3}));
  CHECK(base[0] == doctest::Approx(perm[1]).epsilon(1e-12));
  CHECK(base[1] == doctest::Approx(perm[0]).epsilon(1e-12));
  CHECK(base[2] == doctest::Approx(perm[2]).epsilon(1e-12));

  double sum = 0.0;
  for (double v : base) sum += v;
  CHECK(std::abs(sum - 1.0) <= 1e-9);
}

TEST_CASE("selection scores: zero head gives bias everywhere, argmax picks index 0") {
  TemplateSet t = TemplateSet::defaults();
  ScorerParams scorer = head_params({"classify m000 p000"}, 4, 3);
  scorer.head->bias = 0.7;
  SelectionParams sel{std::move(scorer), SelectionParams::Mode::Pre, 1024};
  SelectionExample ex = example_with_evals({0, 0, 0, 0, 0, 0});
  auto scores = selection_scores(t, sel, ex);
  for (double s : scores) CHECK(s == doctest::Approx(0.7));
  CHECK(select(t, sel, ex) == 0);
}

TEST_CASE("selection scores: identical inputs give identical scores, toy head closed form") {
  TemplateSet t = TemplateSet::defaults();
  ScorerParams scorer = head_params({"cat dog classify"}, 2, 5);
  auto rc = scorer.row(scorer.vocab.id_of("cat"));
  rc[0] = 0.2;
  rc[1] = 0.3;
  auto rd = scorer.row(scorer.vocab.id_of("dog"));
  rd[0] = 0.3;
  rd[1] = 1.2;
  scorer.head->w = {1.0, 1.0};
  scorer.head->bias = 0.0;
  SelectionParams sel{std::move(scorer), SelectionParams::Mode::Pre, 1024};
  SelectionExample ex = example_with_evals({0, 0, 0, 0, 0, 0});
  ex.input_text = "cat dog";
  auto scores = selection_scores(t, sel, ex);
  for (double s : scores) CHECK(s == doctest::Approx(1.0));  // enc = (0.25, 0.75)
}

TEST_CASE("post mode requires outputs") {
  TemplateSet t = TemplateSet::defaults();
  SelectionParams sel{head_params({"classify"}, 2, 5), SelectionParams::Mode::Post, 1024};
  SelectionExample ex = example_with_evals({0, 0, 0, 0, 0, 0});
  ex.has_outputs = false;
  CHECK_THROWS_AS(selection_scores(t, sel, ex), ConfigError);
}

TEST_CASE("post mode appends the output after the separator") {
  TemplateSet t = TemplateSet::defaults();
  SelectionParams sel{head_params({"classify"}, 2, 5), SelectionParams::Mode::Post, 1024};
  SelectionExample ex = example_with_evals({0, 0, 0, 0, 0, 0});
  ex.outputs[2] = "some answer";
  std::string input = selection_input(t, sel, ex, 2);
  CHECK(input == ex.input_text + std::string(kOutputSeparator) + "some answer");
}

TEST_CASE("selection input cap: whole entries drop first, then output characters") {
  TemplateSet t = TemplateSet::defaults();
  SelectionParams sel{head_params({"classify"}, 2, 5), SelectionParams::Mode::Post, 8};
  SelectionExample ex = example_with_evals({0, 0, 0, 0, 0, 0});
  ex.input_text = "classify: m000";
  ex.entries[0] = {"\"tok1 tok2 tok3\"", "\"tok4 tok5 tok6\""};
  ex.outputs[0] = "p000 p001 p002 p003 p004";
  std::string input = selection_input(t, sel, ex, 0);
  CHECK(prompt_token_count(input) <= 8);
  // both entries were dropped whole before the output was trimmed
  CHECK(input.find("tok1") == std::string::npos);
  CHECK(input.find("tok4") == std::string::npos);
  CHECK(input.find("output:") != std::string::npos);
}

TEST_CASE("rspg_step: zero bundle when scores already match an all-tie target") {
  TemplateSet t = TemplateSet::defaults();
  SelectionParams sel{head_params({"classify m000 p000"}, 4, 9), SelectionParams::Mode::Pre, 1024};
  SelectionExample ex = example_with_evals({0.3, 0.3, 0.3, 0.3, 0.3, 0.3});
  StepOutput so = rspg_step(t, {&ex}, sel);
  for (double g : so.grads.embeddings) CHECK(std::abs(g) < 1e-12);
  for (double g : so.grads.head_w) CHECK(std::abs(g) < 1e-12);
  CHECK(std::abs(so.grads.head_bias) < 1e-12);
  CHECK(so.loss == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("rspg_step gradient matches finite differences of the selection KL loss") {
  TemplateSet t = TemplateSet::defaults();
  ScorerParams scorer = head_params({"classify m000 m001 p000 p001 n00 w00"}, 3, 13);
  Rng rng(3);
  for (double& w : scorer.head->w) w = rng.uniform(-0.4, 0.4);
  for (double& v : scorer.embeddings) v = rng.uniform(-0.3, 0.3);
  SelectionParams sel{std::move(scorer), SelectionParams::Mode::Post, 1024};

  SelectionExample ex1 = example_with_evals({0.9, 0.1, 0.3, 0.2, 0.8, 0.4});
  SelectionExample ex2 = example_with_evals({0.2, 0.7, 0.1, 0.6, 0.3, 0.5});
  for (size_t r = 0; r < kPoolSize; ++r) {
    ex1.outputs[r] = r % 2 ? "p000" : "w00 n00";
    ex2.outputs[r] = r % 3 ? "p001 m001" : "n00";
  }
  std::vector<const SelectionExample*> batch{&ex1, &ex2};

  auto loss_fn = [&](const SelectionParams& pp) {
    double total = 0.0;
    for (const SelectionExample* ex : batch) {
      auto probs = softmax_stable(selection_scores(t, pp, *ex));
      auto target = target_selection_distribution(*ex);
      for (size_t r = 0; r < probs.size(); ++r)
        if (target[r] > 0) total += target[r] * std::log(target[r] / probs[r]);
    }
    return total / double(batch.size());
  };

  StepOutput so = rspg_step(t, batch, sel);
  const double eps = 1e-5;
  double worst = 0.0;
  auto check_coord = [&](double& coord, double analytic) {
    double keep = coord;
    coord = keep + eps;
    double hi = loss_fn(sel);
    coord = keep - eps;
    double lo = loss_fn(sel);
    coord = keep;
    double fd = (hi - lo) / (2 * eps);
    double denom = std::max(std::abs(fd) + std::abs(analytic), 1e-6);
    worst = std::max(worst, std::abs(fd - analytic) / denom);
  };
  for (size_t i = 0; i < sel.scorer.embeddings.size(); ++i)
    check_coord(sel.scorer.embeddings[i], so.grads.embeddings[i]);
  for (size_t i = 0; i < sel.scorer.head->w.size(); ++i)
    check_coord(sel.scorer.head->w[i], so.grads.head_w[i]);
  check_coord(sel.scorer.head->bias, so.grads.head_bias);
  CHECK(worst < 1e-4);
}

TEST_CASE("select: dominant score wins, ties resolve to index 0, bias shifts do not matter") {
  TemplateSet t = TemplateSet::defaults();
  ScorerParams scorer = head_params({"classify m000 p000 w00"}, 4, 17);
  Rng rng(7);
  for (double& w : scorer.head->w) w = rng.uniform(-0.5, 0.5);
  for (double& v : scorer.embeddings) v = rng.uniform(-0.5, 0.5);
  SelectionParams sel{std::move(scorer), SelectionParams::Mode::Post, 1024};
  SelectionExample ex = example_with_evals({0, 0, 0, 0, 0, 0});
  for (size_t r = 0; r < kPoolSize; ++r)
    ex.outputs[r] = "p000 w00 m000 " + std::to_string(r);
  int before = select(t, sel, ex);
  sel.scorer.head->bias += 5.25;
  CHECK(select(t, sel, ex) == before);
}

TEST_CASE("rrf fuse: hand-computed rank sums, order preservation, list-order invariance") {
  ScoredList l1{RetrieverKind::BM25, {{"a", 9.0}, {"b", 5.0}}};
  ScoredList l2{RetrieverKind::Recency, {{"a", 1.0}, {"c", 0.5}}};
  ScoredList fused = rrf_fuse({l1, l2});
  REQUIRE(fused.items.size() == 3);
  CHECK(fused.items[0].first == "a");
  CHECK(fused.items[0].second == doctest::Approx(2.0 / 61));
  CHECK(fused.items[1].second == doctest::Approx(1.0 / 62));

  ScoredList single{RetrieverKind::BM25, {{"x", 3.0}, {"y", 2.0}, {"z", 1.0}}};
  ScoredList fs_ = rrf_fuse({single});
  CHECK(fs_.items[0].first == "x");
  CHECK(fs_.items[1].first == "y");
  CHECK(fs_.items[2].first == "z");

  ScoredList ab = rrf_fuse({l1, l2});
  ScoredList ba = rrf_fuse({l2, l1});
  REQUIRE(ab.items.size() == ba.items.size());
  for (size_t i = 0; i < ab.items.size(); ++i) {
    CHECK(ab.items[i].first == ba.items[i].first);
    CHECK(ab.items[i].second == doctest::Approx(ba.items[i].second).epsilon(1e-15));
  }
}

TEST_CASE("rrf fuse: none lists contribute nothing; scores bounded by pool/(k+1)") {
  ScoredList none{RetrieverKind::None, {{"a", 0.0}, {"b", 0.0}}};
  ScoredList l1{RetrieverKind::BM25, {{"a", 2.0}}};
  ScoredList fused = rrf_fuse({none, l1});
  REQUIRE(fused.items.size() == 1);
  CHECK(fused.items[0].second == doctest::Approx(1.0 / 61));
  for (const auto& [id, s] : fused.items) {
    (void)id;
    CHECK(s > 0.0);
    CHECK(s <= double(kPoolSize) / 61.0);
  }
}

TEST_CASE("qpp: constant and all-zero views give zero spread scores") {
  ScoredList constant{RetrieverKind::BM25, {{"a", 2.0}, {"b", 2.0}, {"c", 2.0}, {"d", 2.0}}};
  CHECK(qpp_score(QppMethod::NQC, constant, "q") == doctest::Approx(0.0));
  CHECK(qpp_score(QppMethod::SigmaMax, constant, "q") == doctest::Approx(0.0));
  CHECK(qpp_score(QppMethod::SigmaPct, constant, "q") == doctest::Approx(0.0));

  ScoredList zeros{RetrieverKind::None, {{"a", 0.0}, {"b", 0.0}}};
  CHECK(qpp_score(QppMethod::WIG, zeros, "q") == doctest::Approx(0.0));
  CHECK(qpp_score(QppMethod::NQC, zeros, "q") == doctest::Approx(0.0));
  CHECK(qpp_score(QppMethod::SigmaMax, zeros, "q") == doctest::Approx(0.0));
  CHECK(qpp_score(QppMethod::SigmaPct, zeros, "q") == doctest::Approx(0.0));
}

TEST_CASE("qpp: toy list [4,2,1,1] matches hand arithmetic") {
  ScoredList view{RetrieverKind::BM25, {{"a", 4.0}, {"b", 2.0}, {"c", 1.0}, {"d", 1.0}}};
  std::string query = "one two three four";  // |q| = 4
  // mu over the full view = 2; top-4 deviations sum to 0
  CHECK(qpp_score(QppMethod::WIG, view, query) == doctest::Approx(0.0));
  // NQC = popstd([4,2,1,1]) / |mu|
  double mu = 2.0;
  double var = ((4 - mu) * (4 - mu) + 0 + 1 + 1) / 4.0;
  CHECK(qpp_score(QppMethod::NQC, view, query) ==
        doctest::Approx(std::sqrt(var) / (mu + 1e-9)).epsilon(1e-9));
  // sigma_max over prefixes: std([4,2,1]) is the largest
  double m3 = 7.0 / 3.0;
  double v3 = ((4 - m3) * (4 - m3) + (2 - m3) * (2 - m3) + (1 - m3) * (1 - m3)) / 3.0;
  CHECK(qpp_score(QppMethod::SigmaMax, view, query) == doctest::Approx(std::sqrt(v3)).epsilon(1e-9));
  // sigma_50: scores >= 2 are [4,2], population std = 1
  CHECK(qpp_score(QppMethod::SigmaPct, view, query) == doctest::Approx(1.0));
  // WIG scales with 1/sqrt(|q|): single-token query on an uneven list
  ScoredList uneven{RetrieverKind::BM25, {{"a", 3.0}, {"b", 0.0}, {"c", 0.0}, {"d", 0.0}}};
  double wig1 = qpp_score(QppMethod::WIG, uneven, "one");
  double wig4 = qpp_score(QppMethod::WIG, uneven, "one two three four");
  CHECK(wig1 == doctest::Approx(2.0 * wig4).epsilon(1e-12));
}

TEST_CASE("qpp_select: highest score wins, full tie gives index 0") {
  std::array<ScoredList, kPoolSize> views;
  for (auto& v : views) v = ScoredList{RetrieverKind::None, {{"a", 0.0}, {"b", 0.0}}};
  CHECK(qpp_select(QppMethod::NQC, views, "q") == 0);
  views[3] = ScoredList{RetrieverKind::DenseZeroShot,
                        {{"a", 5.0}, {"b", 1.0}, {"c", 0.5}, {"d", 0.2}}};
  CHECK(qpp_select(QppMethod::NQC, views, "q") == 3);
}

TEST_CASE("success rate: hand-enumerated cases") {
  std::vector<SelectionExample> exs;
  exs.push_back(example_with_evals({1, 0, 0, 0, 0, 0}));  // best {0}
  exs.push_back(example_with_evals({1, 1, 0, 0, 0, 0}));  // best {0,1}
  exs.push_back(example_with_evals({0, 0, 1, 0, 0, 0}));  // best {2}
  CHECK(success_rate({0, 1, 0}, exs) == doctest::Approx(2.0 / 3));
  CHECK(success_rate({0, 0, 2}, exs) == doctest::Approx(1.0));
  // always-worst on instances with a unique best
  std::vector<SelectionExample> unique;
  unique.push_back(example_with_evals({1, 0, 0, 0, 0, 0}));
  unique.push_back(example_with_evals({0, 1, 0, 0, 0, 0}));
  CHECK(success_rate({1, 0}, unique) == 0.0);
}

TEST_CASE("winning rate: strict winner, universal ties, hand-built table") {
  std::vector<SelectionExample> strict;
  strict.push_back(example_with_evals({1, 0, 0, 0, 0, 0}));
  strict.push_back(example_with_evals({1, 0.5, 0, 0, 0, 0}));
  auto wr = winning_rate(strict);
  CHECK(wr[0] == doctest::Approx(1.0));
  for (size_t r = 1; r < kPoolSize; ++r) CHECK(wr[r] == doctest::Approx(0.0));

  std::vector<SelectionExample> tied{example_with_evals({0.5, 0.5, 0.5, 0.5, 0.5, 0.5})};
  auto wr2 = winning_rate(tied);
  for (double v : wr2) CHECK(v == doctest::Approx(1.0));

  std::vector<SelectionExample> four;
  four.push_back(example_with_evals({1, 1, 0, 0, 0, 0}));
  four.push_back(example_with_evals({0, 1, 0, 0, 0, 0}));
  four.push_back(example_with_evals({0, 1, 1, 0, 0, 0}));
  four.push_back(example_with_evals({1, 0, 0, 0, 0, 0}));
  auto wr3 = winning_rate(four);
  CHECK(wr3[0] == doctest::Approx(0.5));
  CHECK(wr3[1] == doctest::Approx(0.75));
  CHECK(wr3[2] == doctest::Approx(0.25));
}

TEST_CASE("oracle bounds: degenerate and 0/1 cases, containment for any selector") {
  std::vector<SelectionExample> same{example_with_evals({0.4, 0.4, 0.4, 0.4, 0.4, 0.4})};
  auto [lo_same, hi_same] = oracle_bounds(same, CorpusMetric::MeanEval);
  CHECK(lo_same == doctest::Approx(hi_same));

  std::vector<SelectionExample> binary;
  binary.push_back(example_with_evals({1, 0, 0, 0, 0, 0}));
  binary.push_back(example_with_evals({0, 0, 1, 0, 0, 0}));
  auto [lo, hi] = oracle_bounds(binary, CorpusMetric::MeanEval);
  CHECK(lo == doctest::Approx(0.0));
  CHECK(hi == doctest::Approx(1.0));

  Rng rng(19);
  std::vector<SelectionExample> random_exs;
  for (int i = 0; i < 25; ++i) {
    std::array<double, kPoolSize> evals{};
    for (double& e : evals) e = rng.next_double();
    random_exs.push_back(example_with_evals(evals, "r" + std::to_string(i)));
  }
  auto [rlo, rhi] = oracle_bounds(random_exs, CorpusMetric::MeanEval);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> sel;
    for (size_t i = 0; i < random_exs.size(); ++i) sel.push_back(int(rng.below(kPoolSize)));
    double v = corpus_metric_value(CorpusMetric::MeanEval, random_exs, sel);
    CHECK(v >= rlo - 1e-12);
    CHECK(v <= rhi + 1e-12);
  }
}

TEST_CASE("oracle bounds on error metrics: the upper bound is numerically smaller") {
  std::vector<SelectionExample> exs;
  // gold rating 5; outputs range from perfect to worst
  for (int i = 0; i < 6; ++i) {
    SelectionExample ex = example_with_evals({0, 0, 0, 0, 0, 0}, "m" + std::to_string(i));
    ex.task = TaskKind::ProductRating;
    ex.target = "5";
    const char* outs[6] = {"5", "4", "3", "2", "1", "no idea"};
    for (size_t r = 0; r < kPoolSize; ++r) {
      ex.outputs[r] = outs[r];
      ex.evals[r] = eval_ordinal_reward(5, outs[r]);
    }
    exs.push_back(std::move(ex));
  }
  auto [lower, upper] = oracle_bounds(exs, CorpusMetric::MAE);
  CHECK(upper <= lower);
  CHECK(upper == doctest::Approx(0.0));
  CHECK(lower == doctest::Approx(4.0));
}

TEST_CASE("build_examples drops instances whose generation fails, with a count") {
  SyntheticSpec spec;
  spec.num_users = 3;
  spec.seed = 8;
  SyntheticData data = generate_synthetic(spec);
  TemplateSet templates = TemplateSet::defaults();
  GeneratorConfig gc;
  gc.kind = GeneratorConfig::Kind::Remote;
  gc.endpoint = "http://127.0.0.1:9/generate";
  gc.retries = 0;
  gc.timeout_s = 0.5;
  Generator gen(gc);
  Vocabulary vocab = Vocabulary::build({"classify m000 p000"});
  ScorerParams initial = ScorerParams::init(vocab, 4, 5, false);
  RetrieverPool pool{&initial, &initial, &initial};
  BuildExamplesResult built = build_examples(data.dataset, pool, gen, templates, 4, 1);
  CHECK(built.examples.empty());
  CHECK(built.dropped == 3);
}

TEST_CASE("train_rspg: deterministic across identical runs") {
  TemplateSet t = TemplateSet::defaults();
  std::vector<SelectionExample> examples;
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    std::array<double, kPoolSize> evals{};
    for (double& e : evals) e = rng.below(2) ? 1.0 : 0.0;
    SelectionExample ex = example_with_evals(evals, "t" + std::to_string(i));
    for (size_t r = 0; r < kPoolSize; ++r)
      ex.outputs[r] = evals[r] > 0.5 ? "p000" : "unknown";
    examples.push_back(std::move(ex));
  }
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.accum_steps = 2;
  tc.seed = 77;

  auto run = [&](const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("lamplab-rspg-" + tag + std::to_string(::getpid()));
    fs::remove_all(dir);
    SelectionParams sel{head_params({"classify m000 p000 unknown output"}, 4, 21),
                        SelectionParams::Mode::Post, 1024};
    RspgTrainOutput out = train_rspg(examples, tc, t, std::move(sel), dir);
    std::string bytes = serialize_checkpoint(out.params.scorer, nullptr);
    fs::remove_all(dir);
    return bytes;
  };
  CHECK(run("a") == run("b"));
}
