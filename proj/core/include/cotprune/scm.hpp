#pragma once

// Finite structural causal model of a reasoning process, evaluated by exact
// enumeration in rational arithmetic.
//
// Steps are generated position by position from transition tables
// P(s_t | s_<t); an exogenous noise value u, drawn once per world, feeds
// a deterministic answer function answer(chain, u). Counterfactual worlds
// share u, while the regenerated suffix of an altered chain is drawn from the
// transition tables.

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <nlohmann/json.hpp>

namespace cotprune::scm {

using Rational = boost::multiprecision::cpp_rational;
using Symbol = std::string;
using SymbolChain = std::vector<Symbol>;
using Distribution = std::vector<std::pair<Symbol, Rational>>;

/// "3/10", "1", "0".
Rational parse_rational(std::string_view text);
std::string format_rational(const Rational& r);
double to_double(const Rational& r);

struct CounterfactualQuery {
  SymbolChain factual_chain;
  std::size_t position = 0;
  Symbol alt_step;
  /// Fixed s'_{>t}; when unset the suffix is drawn from the transitions.
  std::optional<SymbolChain> continuation;
};

struct ScmSpec {
  std::string name;
  std::string question;
  Symbol gold;
  std::size_t horizon = 0;
  std::vector<std::vector<Symbol>> alphabets;
  /// Keyed by prefix; the row gives P(next step | prefix).
  std::map<SymbolChain, Distribution> transitions;
  Distribution noise;
  /// Keyed by full chain; inner map from noise value (or "*") to answer.
  std::map<SymbolChain, std::map<Symbol, Symbol>> answers;
  std::optional<Symbol> default_answer;

  /// Optional query and baseline shipped with a fixture.
  std::optional<CounterfactualQuery> query;
  std::optional<SymbolChain> baseline;

  /// Throws FixtureParseError when rows do not sum to one, symbols fall
  /// outside their alphabet, or answer() is not total.
  void validate() const;

  /// Throws InvalidQuery when no answer is defined.
  const Symbol& answer(const SymbolChain& chain, const Symbol& u) const;
  bool in_alphabet(std::size_t position, const Symbol& symbol) const;
};

/// Parses the line-oriented fixture format (see fixtures/scm/README.md).
ScmSpec parse_scm(std::string_view text);
ScmSpec load_scm(const std::filesystem::path& path);

/// Every completion of `prefix` to full length with its probability.
/// Zero-probability branches are dropped.
std::vector<std::pair<SymbolChain, Rational>> completions(const ScmSpec& scm,
                                                          const SymbolChain& prefix);

/// P(A = y | do(prefix)). A full chain sums over noise only; a shorter
/// prefix also marginalizes the free downstream steps.
Rational interventional_prob(const ScmSpec& scm, const SymbolChain& prefix_or_full);

/// P(A_S = y, A_S' != y) with shared noise.
Rational true_pns(const ScmSpec& scm, const CounterfactualQuery& query);

/// P(A_S != y, A_S' = y): zero exactly when the query is monotone.
Rational monotonicity_violation(const ScmSpec& scm, const CounterfactualQuery& query);

/// Interventional probability of the altered world, P(A = y | do(S')).
Rational altered_prob(const ScmSpec& scm, const CounterfactualQuery& query);

/// Observational P(A != y, S = baseline).
Rational baseline_failure_prob(const ScmSpec& scm, const SymbolChain& baseline);

/// PS(S) = P(A_do(S) = y | A != y, baseline), by shared-noise enumeration
/// over the failing baseline worlds. Unset when the baseline never fails.
std::optional<Rational> sufficiency_prob(const ScmSpec& scm, const SymbolChain& chain,
                                         const SymbolChain& baseline);

enum class CheckStatus { kHolds, kViolated, kPreconditionFailed };
std::string_view to_string(CheckStatus status) noexcept;

struct LemmaReport {
  std::string fixture;
  std::string check;
  CheckStatus status = CheckStatus::kHolds;
  /// Named exact quantities behind the verdict, in a stable order.
  std::vector<std::pair<std::string, Rational>> values;
  std::string detail;

  std::optional<Rational> value(std::string_view key) const;
  nlohmann::json to_json() const;
};

/// true_pns == P(y | do(S)) - P(y | do(S')) under monotonicity.
LemmaReport verify_lemma_monotone(const ScmSpec& scm, const CounterfactualQuery& query);
/// true_pns == 1 - P(y | do(S')) when P(y | do(S)) == 1.
LemmaReport verify_lemma_ps1(const ScmSpec& scm, const CounterfactualQuery& query);
/// P(y | do(S)) == 1 <=> PS(S) == 1, given a baseline that can fail.
LemmaReport verify_equivalence_theorem(const ScmSpec& scm, const SymbolChain& chain,
                                       const SymbolChain& baseline);

/// Runs every check the fixture's query and baseline make applicable.
std::vector<LemmaReport> verify_fixture(const ScmSpec& scm);

/// Sampling helpers for simulators.
const Symbol& sample_noise(const ScmSpec& scm, std::mt19937_64& rng);
/// Draws the next step after `prefix`, optionally excluding one symbol and
/// renormalizing. Falls back to a uniform draw over the position's alphabet
/// when the prefix has no transition row.
Symbol sample_step(const ScmSpec& scm, const SymbolChain& prefix, std::mt19937_64& rng,
                   const std::optional<Symbol>& exclude = std::nullopt);

}  // namespace cotprune::scm
