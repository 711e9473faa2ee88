#include "cotprune/scm_backend.hpp"

#include "cotprune/errors.hpp"
#include "cotprune/prompts.hpp"
#include "cotprune/trace.hpp"

namespace cotprune {

ScmBackend::ScmBackend(scm::ScmSpec scm, std::uint64_t seed) : scm_(std::move(scm)), rng_(seed) {
  scm_.validate();
}

Completion ScmBackend::complete(const PromptBundle& prompt, const GenParams& params) {
  if (params.seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(*params.seed));
    return Completion{respond(prompt, rng), false};
  }
  std::lock_guard lock(mutex_);
  return Completion{respond(prompt, rng_), false};
}

std::vector<std::string> ScmBackend::finish(scm::SymbolChain chain, std::mt19937_64& rng,
                                            bool emit_steps) const {
  if (chain.size() > scm_.horizon) chain.resize(scm_.horizon);
  const std::size_t given = chain.size();
  while (chain.size() < scm_.horizon) chain.push_back(scm::sample_step(scm_, chain, rng));
  std::vector<std::string> out;
  if (emit_steps) out.assign(chain.begin() + static_cast<std::ptrdiff_t>(given), chain.end());
  const auto& u = scm::sample_noise(scm_, rng);
  try {
    out.push_back(scm_.answer(chain, u));
  } catch (const InvalidQuery&) {
    out.push_back("?");
  }
  return out;
}

std::string ScmBackend::respond(const PromptBundle& prompt, std::mt19937_64& rng) const {
  if (auto parsed = parse_intervention_prompt(prompt)) {
    scm::SymbolChain chain = parsed->context_steps;
    if (chain.size() >= scm_.horizon) return join_steps(finish(chain, rng, false));
    const auto first = scm::sample_step(scm_, chain, rng, parsed->avoid_step);
    chain.push_back(first);
    auto rest = finish(chain, rng, true);
    rest.insert(rest.begin(), first);
    return join_steps(rest);
  }
  if (auto parsed = parse_answer_prompt(prompt)) {
    return join_steps(finish(parsed->steps, rng, false));
  }
  return join_steps(finish({}, rng, true));
}

}  // namespace cotprune
