#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>

#include "cotprune/engine.hpp"
#include "cotprune/errors.hpp"
#include "cotprune/scm_backend.hpp"
#include "test_support.hpp"

using namespace cotprune;
namespace ct = cotprune::testing;

namespace {

PruneConfig config_with(int k, double alpha) {
  PruneConfig c;
  c.k = k;
  c.alpha = alpha;
  return c;
}

OptimizedTrace run_scripted(const ct::ScriptedTrace& t, const PruneConfig& config) {
  ct::ScriptedRoles roles;
  ct::script_trace(*roles.base, *roles.rollout, t);
  return optimize_chain(ct::to_trace(t), roles.roles(), config, GenParams{});
}

ct::ScriptedTrace four_steps(std::vector<std::vector<int>> verdicts) {
  ct::ScriptedTrace t;
  t.id = "q";
  t.question = "Compute 99^2 + 99 + 1";
  t.gold = "9901";
  t.steps = {"99^2 = 9801", "9801 + 99 = 9900", "9900 + 1 = 9901", "9901"};
  t.verdicts = std::move(verdicts);
  return t;
}

bool is_subsequence(const std::vector<std::string>& sub, const std::vector<std::string>& full) {
  std::size_t i = 0;
  for (const auto& s : full) {
    if (i < sub.size() && sub[i] == s) ++i;
  }
  return i == sub.size();
}

// Rollout double driven by a step -> verdicts table. Alternatives are named
// after the step index; continuations of a step answer gold when the verdict
// for the next sample is 1.
std::shared_ptr<FunctionBackend> table_rollout(std::map<std::string, int> pass, std::string gold,
                                               std::string regenerated) {
  auto alt_of = std::make_shared<std::map<std::string, std::string>>();
  auto mutex = std::make_shared<std::mutex>();
  return std::make_shared<FunctionBackend>("table", [=](const PromptBundle& p, const GenParams&) {
    const auto parsed = parse_intervention_prompt(p);
    if (!parsed) throw ScriptError("unexpected prompt");
    std::lock_guard lock(*mutex);
    if (parsed->avoid_step) {
      const auto alt = "alternative" + std::to_string(alt_of->size());
      (*alt_of)[alt] = *parsed->avoid_step;
      return Completion{alt, false};
    }
    if (parsed->context_steps.empty()) return Completion{regenerated, false};
    const auto& last = parsed->context_steps.back();
    const auto it = alt_of->find(last);
    if (it == alt_of->end()) throw ScriptError("continuation without alternative");
    return Completion{"go on\n\n" + (pass.at(it->second) ? gold : std::string("wrong")), false};
  });
}

}  // namespace

TEST(Config, Validation) {
  PruneConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.effective_redraw_budget(), 16);
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = PruneConfig{};
  c.k = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = PruneConfig{};
  c.rollout_concurrency = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c = PruneConfig{};
  c.disjointness_threshold = -0.1;
  EXPECT_THROW(c.validate(), InvalidArgument);

  ModelRoles roles{std::make_shared<ScriptedBackend>(), std::make_shared<ScriptedBackend>(), nullptr, nullptr};
  EXPECT_NO_THROW(roles.validate(PruneConfig{}));
  c = PruneConfig{};
  c.strategy = InterventionKind::kExternal;
  EXPECT_THROW(roles.validate(c), InvalidArgument);
  c = PruneConfig{};
  c.validation = ValidationMode::kCoherence;
  EXPECT_THROW(roles.validate(c), InvalidArgument);
}

TEST(Seeds, DeterministicAndSpread) {
  EXPECT_EQ(derive_seed(7, {1, 2}), derive_seed(7, {1, 2}));
  EXPECT_NE(derive_seed(7, {1, 2}), derive_seed(7, {2, 1}));
  EXPECT_NE(derive_seed(7, {1}), derive_seed(8, {1}));
  std::set<std::int64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto s = derive_seed(0, {3, i});
    EXPECT_GE(s, 0);
    seen.insert(s);
  }
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_NE(hash_text("a"), hash_text("b"));
}

TEST(Disjointness, Jaccard) {
  EXPECT_DOUBLE_EQ(jaccard_similarity("a b", "a b"), 1.0);
  EXPECT_DOUBLE_EQ(jaccard_similarity("A b", "a c"), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(jaccard_similarity("", ""), 1.0);
  EXPECT_DOUBLE_EQ(jaccard_similarity("x", ""), 0.0);
  EXPECT_TRUE(semantic_disjoint("a c", "a b", 0.7));
  EXPECT_FALSE(semantic_disjoint("a b", "b  a", 0.7));
}

TEST(Alternative, RetriesUntilDisjoint) {
  ScriptedBackend rollout;
  rollout.on_contains("Ensure", {"9900 + 1 = 9901", "9900 + 1 = 9901", "subtract one instead"});
  ModelRoles roles{nullptr, std::shared_ptr<Backend>(&rollout, [](Backend*) {}), nullptr, nullptr};
  PruneConfig c;
  const std::vector<std::string> prefix = {"99^2 = 9801"};
  const auto out = generate_alternative(Query{"q", "Compute"}, prefix, "9900 + 1 = 9901", roles, c, GenParams{});
  EXPECT_EQ(out.attempts, 3);
  EXPECT_EQ(out.text, "subtract one instead");
}

TEST(Alternative, ExhaustionLeavesStepKept) {
  ScriptedBackend base;
  base.set_fallback("9901");
  ScriptedBackend rollout;
  rollout.on_contains("Ensure", {"9900 + 1 = 9901"});
  ModelRoles roles{std::shared_ptr<Backend>(&base, [](Backend*) {}),
                   std::shared_ptr<Backend>(&rollout, [](Backend*) {}), nullptr, nullptr};
  PruneConfig c = config_with(4, 0.5);
  c.max_disjointness_retries = 1;
  const CoTTrace trace{Query{"q", "Compute"}, "9901", Chain::from_texts({"9900 + 1 = 9901"}), std::nullopt};
  const auto est = estimate_pns_step(trace, {}, 0, roles, c, GenParams{});
  EXPECT_TRUE(est.indeterminate);
  EXPECT_TRUE(est.disjointness_exhausted);
  EXPECT_TRUE(est.kept);
  EXPECT_EQ(est.alt_attempts, 2);
  EXPECT_TRUE(est.samples.empty());
}

TEST(Estimate, VerdictArithmetic) {
  struct Case {
    std::vector<int> verdicts;
    double alpha;
    double value;
    bool kept;
  };
  const std::vector<Case> cases = {
      {{1, 1, 1, 1}, 0.5, 0.0, false},  {{1, 1, 0, 0}, 0.5, 0.5, false}, {{1, 0, 0, 0}, 0.5, 0.75, true},
      {{0, 0, 0, 0}, 0.5, 1.0, true},   {{0, 0, 0, 0}, 1.0, 1.0, false}, {{1, 1, 1, 1}, 0.0, 0.0, false},
      {{1, 1, 1, 0}, 0.0, 0.25, true},
  };
  for (const auto& c : cases) {
    auto t = four_steps({c.verdicts, c.verdicts, c.verdicts, c.verdicts});
    const auto out = run_scripted(t, config_with(4, c.alpha));
    ASSERT_EQ(out.ps, 1);
    EXPECT_DOUBLE_EQ(out.per_step[0].value, c.value);
    EXPECT_EQ(out.per_step[0].kept, c.kept);
    EXPECT_EQ(out.per_step[0].samples.size(), 4u);
    std::vector<std::optional<int>> expected(c.verdicts.begin(), c.verdicts.end());
    EXPECT_EQ(out.per_step[0].verdicts(), expected);
  }
}

TEST(Optimize, SingleStepPruned) {
  auto t = four_steps({{0, 0, 0, 0}, {0, 0, 0, 0}, {1, 1, 1, 1}, {0, 0, 0, 1}});
  const auto out = run_scripted(t, config_with(4, 0.5));
  EXPECT_EQ(out.final_chain.texts(), (std::vector<std::string>{"99^2 = 9801", "9801 + 99 = 9900", "9901"}));
  EXPECT_EQ(out.final_metrics, (ChainMetrics{9, 3}));
  EXPECT_EQ(out.initial_metrics, (ChainMetrics{14, 4}));
  EXPECT_FALSE(out.final_segment_pruned);
  EXPECT_FALSE(out.regenerated);
}

TEST(Optimize, FinalSegmentPruned) {
  auto t = four_steps({{0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}, {1, 1, 1, 1}});
  const auto out = run_scripted(t, config_with(4, 0.5));
  EXPECT_EQ(out.final_chain.size(), 3u);
  EXPECT_TRUE(out.final_segment_pruned);
}

TEST(Optimize, InsufficientTraceIsUntouched) {
  auto t = four_steps({{1, 1, 1, 1}, {1, 1, 1, 1}, {1, 1, 1, 1}, {1, 1, 1, 1}});
  t.base_answer = "9900";
  ct::ScriptedRoles roles;
  ct::script_trace(*roles.base, *roles.rollout, t);
  const auto out = optimize_chain(ct::to_trace(t), roles.roles(), config_with(4, 0.5), GenParams{});
  EXPECT_EQ(out.ps, 0);
  EXPECT_EQ(out.final_chain, ct::to_trace(t).chain);
  EXPECT_EQ(serialize_chain(out.final_chain), join_steps(t.steps));
  EXPECT_TRUE(out.per_step.empty());
  EXPECT_EQ(out.initial_prediction, "9900");
  EXPECT_TRUE(roles.rollout->transcript().empty());
}

TEST(Optimize, KeptPrefixConditioning) {
  auto t = four_steps({{1, 1, 1, 1}, {0, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}});
  ct::ScriptedRoles roles;
  ct::script_trace(*roles.base, *roles.rollout, t);
  optimize_chain(ct::to_trace(t), roles.roles(), config_with(4, 0.5), GenParams{});
  // Step 1 is evaluated against the kept prefix, which no longer holds step 0.
  for (const auto& entry : roles.rollout->transcript()) {
    if (entry.rule.starts_with("alt q 1")) {
      EXPECT_EQ(entry.prompt.user.find("99^2 = 9801"), std::string::npos);
    }
  }
}

TEST(Optimize, PsIndeterminate) {
  ct::ScriptedRoles roles;
  const CoTTrace trace{Query{"q", "x"}, "1", Chain::from_texts({"a"}), std::nullopt};
  EXPECT_THROW(optimize_chain(trace, roles.roles(), config_with(2, 0.5), GenParams{}), PsIndeterminate);
  roles.base->set_fallback("\n\n");
  EXPECT_THROW(optimize_chain(trace, roles.roles(), config_with(2, 0.5), GenParams{}), PsIndeterminate);
  EXPECT_THROW(optimize_chain(CoTTrace{Query{"q", "x"}, "1", Chain{}, std::nullopt}, roles.roles(),
                              config_with(2, 0.5), GenParams{}),
               PsIndeterminate);
}

TEST(Optimize, UnavailableBackendPropagates) {
  auto base = std::make_shared<FunctionBackend>(
      "down", [](const PromptBundle&, const GenParams&) -> Completion { throw BackendUnavailable("down"); });
  ModelRoles roles{base, std::make_shared<ScriptedBackend>(), nullptr, nullptr};
  const CoTTrace trace{Query{"q", "x"}, "1", Chain::from_texts({"a"}), std::nullopt};
  EXPECT_THROW(optimize_chain(trace, roles, config_with(2, 0.5), GenParams{}), BackendUnavailable);
}

TEST(Redraw, MissingVerdictsUseBudgetThenIndeterminate) {
  auto t = four_steps({{1, 1}, {1, 1}, {1, 1}, {1, 1}});
  ct::ScriptedRoles roles;
  ct::script_trace(*roles.base, *roles.rollout, t);
  auto validator = std::make_shared<ScriptedBackend>("validator");  // no rules: every call fails
  ModelRoles with_validator = roles.roles();
  with_validator.validator = validator;
  PruneConfig c = config_with(2, 0.5);
  c.validation = ValidationMode::kCoherence;
  c.redraw_budget = 3;
  const auto out = optimize_chain(ct::to_trace(t), with_validator, c, GenParams{});
  ASSERT_EQ(out.per_step.size(), 4u);
  for (const auto& e : out.per_step) {
    EXPECT_TRUE(e.indeterminate);
    EXPECT_TRUE(e.kept);
    EXPECT_DOUBLE_EQ(e.value, 1.0);
    EXPECT_EQ(e.redraws, 3);
    EXPECT_TRUE(e.redraw_budget_exhausted);
    EXPECT_EQ(e.verdicts(), (std::vector<std::optional<int>>{std::nullopt, std::nullopt}));
  }
  EXPECT_EQ(out.final_chain.size(), 4u);
}

TEST(Redraw, CoherentValidatorScores) {
  auto t = four_steps({{1, 1}, {0, 0}, {1, 1}, {0, 0}});
  ct::ScriptedRoles roles;
  ct::script_trace(*roles.base, *roles.rollout, t);
  auto validator = std::make_shared<ScriptedBackend>("validator");
  validator->set_fallback("yes");
  ModelRoles r = roles.roles();
  r.validator = validator;
  PruneConfig c = config_with(2, 0.5);
  c.validation = ValidationMode::kCoherence;
  const auto out = optimize_chain(ct::to_trace(t), r, c, GenParams{});
  EXPECT_EQ(out.final_chain.size(), 2u);
  // The validator is consulted only for continuations with the right answer.
  EXPECT_EQ(validator->transcript().size(), 4u);
}

TEST(Redraw, EchoedDownstreamIsRedrawn) {
  ScriptedBackend base;
  base.set_fallback("9901");
  ScriptedBackend rollout;
  rollout.on_contains("Ensure", {"something else entirely"});
  rollout.on_contains("something else entirely", {"9900 + 1 = 9901\n\n9901", "fresh path\n\n9901"});
  ModelRoles roles{std::shared_ptr<Backend>(&base, [](Backend*) {}),
                   std::shared_ptr<Backend>(&rollout, [](Backend*) {}), nullptr, nullptr};
  const CoTTrace trace{Query{"q", "Compute"}, "9901", Chain::from_texts({"99^2 = 9801", "9900 + 1 = 9901", "9901"}),
                       std::nullopt};
  const auto est = estimate_pns_step(trace, {}, 0, roles, config_with(3, 0.5), GenParams{});
  EXPECT_EQ(est.redraws, 1);
  EXPECT_FALSE(est.indeterminate);
  for (const auto& s : est.samples) {
    EXPECT_TRUE(s.disjoint);
    EXPECT_EQ(s.continuation, (std::vector<std::string>{"fresh path", "9901"}));
  }
}

TEST(Optimize, ResampleAltPerRollout) {
  auto t = four_steps({{1, 1, 1}, {0, 0, 0}, {0, 0, 0}, {0, 0, 0}});
  ct::ScriptedRoles roles;
  ct::script_trace(*roles.base, *roles.rollout, t);
  PruneConfig c = config_with(3, 0.5);
  c.resample_alt_per_rollout = true;
  const auto out = optimize_chain(ct::to_trace(t), roles.roles(), c, GenParams{});
  EXPECT_EQ(out.final_chain.size(), 3u);
  EXPECT_EQ(out.per_step[0].alt_attempts, 4);  // the shared draw plus one per rollout
}

TEST(Optimize, CascadeRegeneratesAfterPrune) {
  const std::map<std::string, int> pass = {{"s0 first", 1}, {"s1 second", 0}, {"s2 third", 0},
                                           {"fresh one", 0},  {"fresh two", 0}, {"42", 0}};
  auto rollout = table_rollout(pass, "42", "fresh one\n\nfresh two\n\n42");
  auto base = std::make_shared<ScriptedBackend>();
  base->set_fallback("42");
  const CoTTrace trace{Query{"q", "question"}, "42", Chain::from_texts({"s0 first", "s1 second", "s2 third"}),
                       std::nullopt};
  PruneConfig c = config_with(2, 0.5);
  const auto plain = optimize_chain(trace, ModelRoles{base, rollout, nullptr, nullptr}, c, GenParams{});
  EXPECT_EQ(plain.final_chain.texts(), (std::vector<std::string>{"s1 second", "s2 third"}));
  EXPECT_FALSE(plain.regenerated);

  c.cascade = true;
  auto rollout2 = table_rollout(pass, "42", "fresh one\n\nfresh two\n\n42");
  const auto cascaded = optimize_chain(trace, ModelRoles{base, rollout2, nullptr, nullptr}, c, GenParams{});
  EXPECT_TRUE(cascaded.regenerated);
  EXPECT_EQ(cascaded.final_chain.texts(), (std::vector<std::string>{"fresh one", "fresh two", "42"}));
  EXPECT_EQ(cascaded.per_step.size(), 4u);
}

TEST(Properties, RangeSubsequenceAntitone) {
  std::mt19937 rng(23);
  for (int trial = 0; trial < 40; ++trial) {
    const int k = std::uniform_int_distribution<int>(1, 6)(rng);
    ct::ScriptedTrace t;
    t.id = "p" + std::to_string(trial);
    t.question = "Property question " + t.id;
    const int n = std::uniform_int_distribution<int>(1, 5)(rng);
    for (int i = 0; i < n; ++i) {
      t.steps.push_back("step " + std::to_string(i) + " of " + t.id);
      std::vector<int> v;
      for (int j = 0; j < k; ++j) v.push_back(std::bernoulli_distribution(0.5)(rng) ? 1 : 0);
      t.verdicts.push_back(v);
    }
    std::size_t previous_tokens = std::numeric_limits<std::size_t>::max();
    std::vector<std::string> previous_chain = t.steps;
    for (double alpha : {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0}) {
      const auto out = run_scripted(t, config_with(k, alpha));
      ASSERT_EQ(out.ps, 1);
      for (const auto& e : out.per_step) {
        EXPECT_GE(e.value, 0.0);
        EXPECT_LE(e.value, 1.0);
        EXPECT_EQ(e.kept, e.value > alpha);
      }
      const auto texts = out.final_chain.texts();
      EXPECT_TRUE(is_subsequence(texts, t.steps));
      EXPECT_TRUE(is_subsequence(texts, previous_chain));
      EXPECT_LE(out.final_metrics.tokens, previous_tokens);
      EXPECT_LE(out.final_metrics.tokens, out.initial_metrics.tokens);
      previous_tokens = out.final_metrics.tokens;
      previous_chain = texts;
    }
  }
}

TEST(Means, EvaluatedAndKept) {
  std::vector<PnsEstimate> e(3);
  e[0].value = 0.2;
  e[0].kept = false;
  e[1].value = 0.8;
  e[2].indeterminate = true;
  EXPECT_DOUBLE_EQ(*mean_pns_evaluated(e), 0.5);
  EXPECT_DOUBLE_EQ(*mean_pns_kept(e), 0.8);
  EXPECT_FALSE(mean_pns_kept(std::span<const PnsEstimate>(e.data() + 2, 1)));
}

TEST(Concurrency, SeededRolloutsAreOrderIndependent) {
  auto scm = scm::load_scm(ct::scm_fixture("monotone_mixed"));
  const CoTTrace trace{Query{"q", scm.question}, "y", Chain::from_texts({"a", "c", "e"}), std::nullopt};
  GenParams params;
  params.seed = 99;
  auto run = [&](int concurrency) {
    auto backend = std::make_shared<ScmBackend>(scm, 1);
    ModelRoles roles{backend, backend, nullptr, nullptr};
    PruneConfig c = config_with(64, 0.5);
    c.rollout_concurrency = concurrency;
    return optimize_chain(trace, roles, c, params);
  };
  const auto serial = run(1);
  const auto parallel = run(8);
  ASSERT_EQ(serial.per_step.size(), parallel.per_step.size());
  for (std::size_t i = 0; i < serial.per_step.size(); ++i) {
    EXPECT_EQ(serial.per_step[i].verdicts(), parallel.per_step[i].verdicts());
  }
  EXPECT_EQ(serial.final_chain, parallel.final_chain);
}

TEST(Statistics, RolloutsMatchInterventionalDistribution) {
  // Continuations after (a, d) on monotone_mixed pass with P(y | do(a, d)) = 7/12.
  auto scm = scm::load_scm(ct::scm_fixture("monotone_mixed"));
  const double p = scm::to_double(scm::interventional_prob(scm, {"a", "d"}));
  ASSERT_DOUBLE_EQ(p, 7.0 / 12.0);
  auto backend = std::make_shared<ScmBackend>(scm, 3);
  ModelRoles roles{backend, backend, nullptr, nullptr};
  const CoTTrace trace{Query{"q", scm.question}, "y", Chain::from_texts({"a", "c", "e"}), std::nullopt};
  PruneConfig c = config_with(1000, 0.5);
  c.rollout_concurrency = 8;
  GenParams params;
  params.seed = 2024;
  const std::vector<std::string> prefix = {"a"};
  const auto est = estimate_pns_step(trace, prefix, 1, roles, c, params);
  ASSERT_FALSE(est.indeterminate);
  int pass = 0, scored = 0;
  for (const auto& s : est.samples) {
    EXPECT_EQ(s.alt_step, "d");
    if (s.verdict == Verdict::kMissing) continue;
    ++scored;
    pass += s.verdict == Verdict::kPass;
  }
  ASSERT_EQ(scored, 1000);
  const double expected_pass = p * scored;
  const double expected_fail = (1 - p) * scored;
  const double chi2 = (pass - expected_pass) * (pass - expected_pass) / expected_pass +
                      (scored - pass - expected_fail) * (scored - pass - expected_fail) / expected_fail;
  const double critical = boost::math::quantile(boost::math::complement(boost::math::chi_squared(1.0), 0.001));
  EXPECT_NEAR(critical, 10.828, 1e-3);
  EXPECT_LT(chi2, critical) << "pass=" << pass;
  EXPECT_NEAR(est.value, 1.0 - p, 0.06);
}
