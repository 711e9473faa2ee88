#include "cotprune/scm.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "cotprune/errors.hpp"
#include "cotprune/trace.hpp"

namespace cotprune::scm {
namespace {

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string token;
  while (in >> token) out.push_back(token);
  return out;
}

std::string join_symbols(const SymbolChain& chain) {
  std::string out;
  for (const auto& s : chain) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out.empty() ? "<empty>" : out;
}

Distribution parse_distribution(std::string_view text, std::size_t line) {
  Distribution out;
  for (const auto& item : split_ws(text)) {
    const auto colon = item.rfind(':');
    if (colon == std::string::npos || colon == 0) {
      throw FixtureParseError("expected symbol:probability, got \"" + item + "\"", line);
    }
    try {
      out.emplace_back(item.substr(0, colon), parse_rational(item.substr(colon + 1)));
    } catch (const InvalidArgument& e) {
      throw FixtureParseError(e.what(), line);
    }
  }
  if (out.empty()) throw FixtureParseError("empty distribution", line);
  return out;
}

std::size_t parse_index(std::string_view text, std::size_t line) {
  std::size_t value = 0;
  try {
    std::size_t used = 0;
    value = std::stoul(std::string(text), &used);
    if (used != text.size()) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw FixtureParseError("expected a non-negative integer, got \"" + std::string(text) + "\"", line);
  }
  return value;
}

// "transition[a b]" -> {"a", "b"}; returns nullopt if key lacks the prefix.
std::optional<SymbolChain> bracketed(std::string_view key, std::string_view head, std::size_t line) {
  if (!key.starts_with(head) || key.size() <= head.size() || key[head.size()] != '[') {
    return std::nullopt;
  }
  if (key.back() != ']') throw FixtureParseError("unterminated '[' in key", line);
  return split_ws(key.substr(head.size() + 1, key.size() - head.size() - 2));
}

Rational sum_of(const Distribution& d) {
  Rational total = 0;
  for (const auto& [_, p] : d) total += p;
  return total;
}

bool succeeds(const ScmSpec& scm, const SymbolChain& chain, const Symbol& u) {
  return scm.answer(chain, u) == scm.gold;
}

Rational success_prob(const ScmSpec& scm, const SymbolChain& full_chain) {
  Rational total = 0;
  for (const auto& [u, p] : scm.noise) {
    if (succeeds(scm, full_chain, u)) total += p;
  }
  return total;
}

void check_full_chain(const ScmSpec& scm, const SymbolChain& chain, const char* what) {
  if (chain.size() != scm.horizon) {
    throw InvalidQuery(std::string(what) + " must have " + std::to_string(scm.horizon) +
                       " steps, got " + std::to_string(chain.size()));
  }
  for (std::size_t t = 0; t < chain.size(); ++t) {
    if (!scm.in_alphabet(t, chain[t])) {
      throw InvalidQuery(std::string(what) + ": symbol \"" + chain[t] +
                         "\" not in alphabet of position " + std::to_string(t));
    }
  }
}

void check_query(const ScmSpec& scm, const CounterfactualQuery& query) {
  check_full_chain(scm, query.factual_chain, "factual chain");
  if (query.position >= scm.horizon) throw InvalidQuery("query position out of range");
  if (!scm.in_alphabet(query.position, query.alt_step)) {
    throw InvalidQuery("alt step \"" + query.alt_step + "\" not in alphabet of position " +
                       std::to_string(query.position));
  }
  if (query.continuation) {
    SymbolChain altered(query.factual_chain.begin(),
                        query.factual_chain.begin() + static_cast<std::ptrdiff_t>(query.position));
    altered.push_back(query.alt_step);
    altered.insert(altered.end(), query.continuation->begin(), query.continuation->end());
    check_full_chain(scm, altered, "altered chain");
  }
}

// Distribution over full altered chains S' = (s_<t, alt, s'_>t).
std::vector<std::pair<SymbolChain, Rational>> altered_worlds(const ScmSpec& scm,
                                                             const CounterfactualQuery& query) {
  check_query(scm, query);
  SymbolChain prefix(query.factual_chain.begin(),
                     query.factual_chain.begin() + static_cast<std::ptrdiff_t>(query.position));
  prefix.push_back(query.alt_step);
  if (query.continuation) {
    prefix.insert(prefix.end(), query.continuation->begin(), query.continuation->end());
    return {{prefix, Rational(1)}};
  }
  return completions(scm, prefix);
}

Rational bool_rational(bool b) { return b ? Rational(1) : Rational(0); }

}  // namespace

Rational parse_rational(std::string_view text) {
  const std::string s(trim(text));
  const auto slash = s.find('/');
  auto parse_int = [&](const std::string& part) {
    if (part.empty() || !std::all_of(part.begin(), part.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      throw InvalidArgument("not a non-negative rational: \"" + s + "\"");
    }
    return boost::multiprecision::cpp_int(part);
  };
  if (slash == std::string::npos) return Rational(parse_int(s));
  const auto num = parse_int(s.substr(0, slash));
  const auto den = parse_int(s.substr(slash + 1));
  if (den == 0) throw InvalidArgument("zero denominator in \"" + s + "\"");
  return Rational(num, den);
}

std::string format_rational(const Rational& r) {
  const auto num = boost::multiprecision::numerator(r);
  const auto den = boost::multiprecision::denominator(r);
  if (den == 1) return num.str();
  return num.str() + "/" + den.str();
}

double to_double(const Rational& r) { return r.convert_to<double>(); }

bool ScmSpec::in_alphabet(std::size_t position, const Symbol& symbol) const {
  if (position >= alphabets.size()) return false;
  const auto& a = alphabets[position];
  return std::find(a.begin(), a.end(), symbol) != a.end();
}

const Symbol& ScmSpec::answer(const SymbolChain& chain, const Symbol& u) const {
  if (auto it = answers.find(chain); it != answers.end()) {
    if (auto hit = it->second.find(u); hit != it->second.end()) return hit->second;
    if (auto wild = it->second.find("*"); wild != it->second.end()) return wild->second;
  }
  if (default_answer) return *default_answer;
  throw InvalidQuery("no answer defined for chain [" + join_symbols(chain) + "] and noise " + u);
}

void ScmSpec::validate() const {
  auto fail = [&](const std::string& what) { throw FixtureParseError(name + ": " + what, 0); };
  if (gold.empty()) fail("gold answer missing");
  if (horizon == 0) fail("horizon must be >= 1");
  if (alphabets.size() != horizon) fail("need one alphabet per position");
  for (std::size_t t = 0; t < horizon; ++t) {
    if (alphabets[t].empty()) fail("alphabet " + std::to_string(t) + " is empty");
    std::set<Symbol> unique(alphabets[t].begin(), alphabets[t].end());
    if (unique.size() != alphabets[t].size()) fail("duplicate symbol in alphabet " + std::to_string(t));
  }
  if (noise.empty()) fail("noise distribution missing");
  std::set<Symbol> noise_names;
  for (const auto& [u, p] : noise) {
    if (u == "*") fail("'*' is reserved and cannot name a noise value");
    if (!noise_names.insert(u).second) fail("duplicate noise value " + u);
    if (p < 0) fail("negative noise probability");
  }
  if (sum_of(noise) != 1) fail("noise probabilities sum to " + format_rational(sum_of(noise)));

  for (const auto& [prefix, row] : transitions) {
    if (prefix.size() >= horizon) fail("transition prefix [" + join_symbols(prefix) + "] too long");
    for (std::size_t t = 0; t < prefix.size(); ++t) {
      if (!in_alphabet(t, prefix[t])) fail("transition prefix symbol " + prefix[t] + " not in alphabet");
    }
    std::set<Symbol> seen;
    for (const auto& [s, p] : row) {
      if (!in_alphabet(prefix.size(), s)) {
        fail("transition [" + join_symbols(prefix) + "] emits " + s + " outside its alphabet");
      }
      if (!seen.insert(s).second) fail("duplicate symbol " + s + " in transition row");
      if (p < 0) fail("negative transition probability");
    }
    if (sum_of(row) != 1) {
      fail("transition [" + join_symbols(prefix) + "] sums to " + format_rational(sum_of(row)));
    }
  }

  for (const auto& [chain, by_noise] : answers) {
    if (chain.size() != horizon) fail("answer key [" + join_symbols(chain) + "] is not a full chain");
    for (std::size_t t = 0; t < chain.size(); ++t) {
      if (!in_alphabet(t, chain[t])) fail("answer key symbol " + chain[t] + " not in alphabet");
    }
    for (const auto& [u, _] : by_noise) {
      if (u != "*" && !noise_names.count(u)) fail("answer refers to unknown noise value " + u);
    }
  }

  // Totality over the full product space.
  SymbolChain chain(horizon);
  auto visit = [&](auto&& self, std::size_t t) -> void {
    if (t == horizon) {
      for (const auto& [u, _] : noise) {
        try {
          (void)answer(chain, u);
        } catch (const InvalidQuery& e) {
          fail(e.what());
        }
      }
      return;
    }
    for (const auto& s : alphabets[t]) {
      chain[t] = s;
      self(self, t + 1);
    }
  };
  visit(visit, 0);

  try {
    if (query) check_query(*this, *query);
    if (baseline) check_full_chain(*this, *baseline, "baseline");
  } catch (const InvalidQuery& e) {
    fail(e.what());
  }
}

ScmSpec parse_scm(std::string_view text) {
  ScmSpec scm;
  std::map<std::size_t, std::vector<Symbol>> alphabets;
  std::optional<SymbolChain> factual;
  std::optional<std::size_t> position;
  std::optional<Symbol> alt;
  std::optional<SymbolChain> continuation;
  std::set<std::string> seen_keys;

  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FixtureParseError("expected key = value", line_no);
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (!seen_keys.insert(key).second) throw FixtureParseError("duplicate key " + key, line_no);

    if (key == "name") {
      scm.name = value;
    } else if (key == "question") {
      scm.question = value;
    } else if (key == "gold") {
      scm.gold = value;
    } else if (key == "horizon") {
      scm.horizon = parse_index(value, line_no);
    } else if (key.starts_with("alphabet.")) {
      alphabets[parse_index(std::string_view(key).substr(9), line_no)] = split_ws(value);
    } else if (key == "noise") {
      scm.noise = parse_distribution(value, line_no);
    } else if (auto prefix = bracketed(key, "transition", line_no)) {
      scm.transitions[*prefix] = parse_distribution(value, line_no);
    } else if (auto chain = bracketed(key, "answer", line_no)) {
      auto& row = scm.answers[*chain];
      for (const auto& item : split_ws(value)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
          row["*"] = item;
        } else {
          row[item.substr(0, colon)] = item.substr(colon + 1);
        }
      }
    } else if (key == "answer.default") {
      scm.default_answer = value;
    } else if (key == "query.factual") {
      factual = split_ws(value);
    } else if (key == "query.position") {
      position = parse_index(value, line_no);
    } else if (key == "query.alt") {
      alt = value;
    } else if (key == "query.continuation") {
      continuation = split_ws(value);
    } else if (key == "baseline") {
      scm.baseline = split_ws(value);
    } else {
      throw FixtureParseError("unknown key " + key, line_no);
    }
  }

  for (const auto& [t, symbols] : alphabets) {
    if (t >= scm.horizon) throw FixtureParseError("alphabet index beyond horizon", 0);
  }
  scm.alphabets.resize(scm.horizon);
  for (auto& [t, symbols] : alphabets) scm.alphabets[t] = std::move(symbols);

  if (factual || position || alt || continuation) {
    if (!factual || !position || !alt) {
      throw FixtureParseError("query needs query.factual, query.position and query.alt", 0);
    }
    scm.query = CounterfactualQuery{*factual, *position, *alt, continuation};
  }
  if (scm.name.empty()) scm.name = "unnamed";
  scm.validate();
  return scm;
}

ScmSpec load_scm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FixtureParseError("cannot open " + path.string(), 0);
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    auto scm = parse_scm(buffer.str());
    return scm;
  } catch (const FixtureParseError& e) {
    throw FixtureParseError(path.filename().string() + ": " + e.what(), e.line());
  }
}

std::vector<std::pair<SymbolChain, Rational>> completions(const ScmSpec& scm,
                                                          const SymbolChain& prefix) {
  if (prefix.size() > scm.horizon) throw InvalidQuery("prefix longer than the horizon");
  for (std::size_t t = 0; t < prefix.size(); ++t) {
    if (!scm.in_alphabet(t, prefix[t])) {
      throw InvalidQuery("symbol \"" + prefix[t] + "\" not in alphabet of position " + std::to_string(t));
    }
  }
  std::vector<std::pair<SymbolChain, Rational>> out;
  SymbolChain chain = prefix;
  auto walk = [&](auto&& self, const Rational& mass) -> void {
    if (chain.size() == scm.horizon) {
      out.emplace_back(chain, mass);
      return;
    }
    const auto row = scm.transitions.find(chain);
    if (row == scm.transitions.end()) {
      throw InvalidQuery("no transition row for prefix [" + join_symbols(chain) + "]");
    }
    for (const auto& [symbol, p] : row->second) {
      if (p == 0) continue;
      chain.push_back(symbol);
      self(self, mass * p);
      chain.pop_back();
    }
  };
  walk(walk, Rational(1));
  return out;
}

Rational interventional_prob(const ScmSpec& scm, const SymbolChain& prefix_or_full) {
  Rational total = 0;
  for (const auto& [chain, p] : completions(scm, prefix_or_full)) total += p * success_prob(scm, chain);
  return total;
}

Rational true_pns(const ScmSpec& scm, const CounterfactualQuery& query) {
  const auto worlds = altered_worlds(scm, query);
  Rational total = 0;
  for (const auto& [u, pu] : scm.noise) {
    if (!succeeds(scm, query.factual_chain, u)) continue;
    for (const auto& [altered, p] : worlds) {
      if (!succeeds(scm, altered, u)) total += pu * p;
    }
  }
  return total;
}

Rational monotonicity_violation(const ScmSpec& scm, const CounterfactualQuery& query) {
  const auto worlds = altered_worlds(scm, query);
  Rational total = 0;
  for (const auto& [u, pu] : scm.noise) {
    if (succeeds(scm, query.factual_chain, u)) continue;
    for (const auto& [altered, p] : worlds) {
      if (succeeds(scm, altered, u)) total += pu * p;
    }
  }
  return total;
}

Rational altered_prob(const ScmSpec& scm, const CounterfactualQuery& query) {
  Rational total = 0;
  for (const auto& [altered, p] : altered_worlds(scm, query)) total += p * success_prob(scm, altered);
  return total;
}

Rational baseline_failure_prob(const ScmSpec& scm, const SymbolChain& baseline) {
  check_full_chain(scm, baseline, "baseline");
  Rational path = 1;
  SymbolChain prefix;
  for (const auto& symbol : baseline) {
    const auto row = scm.transitions.find(prefix);
    if (row == scm.transitions.end()) {
      throw InvalidQuery("no transition row for prefix [" + join_symbols(prefix) + "]");
    }
    Rational p = 0;
    for (const auto& [s, q] : row->second) {
      if (s == symbol) p = q;
    }
    path *= p;
    prefix.push_back(symbol);
  }
  return path * (Rational(1) - success_prob(scm, baseline));
}

std::optional<Rational> sufficiency_prob(const ScmSpec& scm, const SymbolChain& chain,
                                         const SymbolChain& baseline) {
  check_full_chain(scm, chain, "chain");
  check_full_chain(scm, baseline, "baseline");
  Rational failing = 0;
  Rational rescued = 0;
  for (const auto& [u, p] : scm.noise) {
    if (succeeds(scm, baseline, u)) continue;
    failing += p;
    if (succeeds(scm, chain, u)) rescued += p;
  }
  if (failing == 0) return std::nullopt;
  return rescued / failing;
}

std::string_view to_string(CheckStatus status) noexcept {
  switch (status) {
    case CheckStatus::kHolds: return "holds";
    case CheckStatus::kViolated: return "violated";
    case CheckStatus::kPreconditionFailed: return "precondition-failed";
  }
  return "violated";
}

std::optional<Rational> LemmaReport::value(std::string_view key) const {
  for (const auto& [k, v] : values) {
    if (k == key) return v;
  }
  return std::nullopt;
}

nlohmann::json LemmaReport::to_json() const {
  nlohmann::json vals = nlohmann::json::object();
  for (const auto& [k, v] : values) vals[k] = format_rational(v);
  return {{"fixture", fixture}, {"check", check}, {"status", to_string(status)},
          {"values", vals}, {"detail", detail}};
}

LemmaReport verify_lemma_monotone(const ScmSpec& scm, const CounterfactualQuery& query) {
  LemmaReport report{scm.name, "lemma-monotone", CheckStatus::kHolds, {}, {}};
  const auto pns = true_pns(scm, query);
  const auto p_s = interventional_prob(scm, query.factual_chain);
  const auto p_alt = altered_prob(scm, query);
  const auto violation = monotonicity_violation(scm, query);
  const auto difference = p_s - p_alt;
  report.values = {{"true_pns", pns},
                   {"p_do_s", p_s},
                   {"p_do_s_prime", p_alt},
                   {"difference", difference},
                   {"monotonicity_violation", violation}};
  if (violation != 0) {
    report.status = CheckStatus::kPreconditionFailed;
    report.detail = "monotonicity fails: P(A_S != y, A_S' = y) = " + format_rational(violation) +
                    "; true_pns - difference = " + format_rational(pns - difference);
  } else if (pns == difference) {
    report.detail = "true_pns equals P(y|do(S)) - P(y|do(S'))";
  } else {
    report.status = CheckStatus::kViolated;
    report.detail = "true_pns " + format_rational(pns) + " != difference " + format_rational(difference);
  }
  return report;
}

LemmaReport verify_lemma_ps1(const ScmSpec& scm, const CounterfactualQuery& query) {
  LemmaReport report{scm.name, "lemma-ps1", CheckStatus::kHolds, {}, {}};
  const auto pns = true_pns(scm, query);
  const auto p_s = interventional_prob(scm, query.factual_chain);
  const auto p_alt = altered_prob(scm, query);
  report.values = {{"true_pns", pns},
                   {"p_do_s", p_s},
                   {"p_do_s_prime", p_alt},
                   {"one_minus_p_do_s_prime", Rational(1) - p_alt}};
  if (p_s != 1) {
    report.status = CheckStatus::kPreconditionFailed;
    report.detail = "P(y|do(S)) = " + format_rational(p_s) + ", not 1";
  } else if (pns == Rational(1) - p_alt) {
    report.detail = "true_pns equals 1 - P(y|do(S'))";
  } else {
    report.status = CheckStatus::kViolated;
    report.detail = "true_pns " + format_rational(pns) + " != 1 - P(y|do(S')) " +
                    format_rational(Rational(1) - p_alt);
  }
  return report;
}

LemmaReport verify_equivalence_theorem(const ScmSpec& scm, const SymbolChain& chain,
                                       const SymbolChain& baseline) {
  LemmaReport report{scm.name, "equivalence-theorem", CheckStatus::kHolds, {}, {}};
  const auto fail_mass = baseline_failure_prob(scm, baseline);
  const auto p_s = interventional_prob(scm, chain);
  report.values = {{"baseline_failure", fail_mass}, {"p_do_s", p_s}};
  if (fail_mass == 0) {
    report.status = CheckStatus::kPreconditionFailed;
    report.detail = "baseline never fails: P(A != y, baseline) = 0";
    return report;
  }
  const auto ps = *sufficiency_prob(scm, chain, baseline);
  const bool perfect = p_s == 1;
  const bool full = ps == 1;
  report.values.emplace_back("ps", ps);
  report.values.emplace_back("perfect_intervention", bool_rational(perfect));
  report.values.emplace_back("full_sufficiency", bool_rational(full));
  if (perfect == full) {
    report.detail = perfect ? "both sides hold" : "neither side holds";
  } else {
    report.status = CheckStatus::kViolated;
    report.detail = perfect ? "P(y|do(S)) = 1 but PS < 1" : "PS = 1 but P(y|do(S)) < 1";
  }
  return report;
}

std::vector<LemmaReport> verify_fixture(const ScmSpec& scm) {
  std::vector<LemmaReport> out;
  if (scm.query) {
    out.push_back(verify_lemma_monotone(scm, *scm.query));
    out.push_back(verify_lemma_ps1(scm, *scm.query));
    if (scm.baseline) {
      out.push_back(verify_equivalence_theorem(scm, scm.query->factual_chain, *scm.baseline));
    }
  }
  return out;
}

const Symbol& sample_noise(const ScmSpec& scm, std::mt19937_64& rng) {
  std::vector<double> weights;
  weights.reserve(scm.noise.size());
  for (const auto& [_, p] : scm.noise) weights.push_back(to_double(p));
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  return scm.noise[pick(rng)].first;
}

Symbol sample_step(const ScmSpec& scm, const SymbolChain& prefix, std::mt19937_64& rng,
                   const std::optional<Symbol>& exclude) {
  if (prefix.size() >= scm.horizon) throw InvalidQuery("prefix already spans the horizon");
  Distribution row;
  if (auto it = scm.transitions.find(prefix); it != scm.transitions.end()) {
    row = it->second;
  } else {
    for (const auto& s : scm.alphabets[prefix.size()]) row.emplace_back(s, Rational(1));
  }
  std::vector<double> weights;
  bool any = false;
  for (const auto& [s, p] : row) {
    const bool allowed = !(exclude && s == *exclude);
    weights.push_back(allowed ? to_double(p) : 0.0);
    any = any || (allowed && p > 0);
  }
  if (!any) {
    weights.clear();
    for (const auto& [_, p] : row) weights.push_back(to_double(p));
  }
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  return row[pick(rng)].first;
}

}  // namespace cotprune::scm
