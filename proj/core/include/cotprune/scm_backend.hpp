#pragma once

// A Backend that answers engine prompts by sampling from a finite SCM.
//
// Steps are the SCM's symbols. Intervention prompts continue the context
// chain to the horizon and end with the answer for a freshly drawn noise
// value; answer prompts complete the given steps and reply with the answer.
// A prompt-based prompt excludes the step it names from the first draw.

#include <cstdint>
#include <mutex>
#include <random>

#include "cotprune/gateway.hpp"
#include "cotprune/scm.hpp"

namespace cotprune {

class ScmBackend final : public Backend {
 public:
  /// `seed` drives calls that carry no seed of their own.
  explicit ScmBackend(scm::ScmSpec scm, std::uint64_t seed = 0);

  std::string name() const override { return "scm:" + scm_.name; }
  const scm::ScmSpec& spec() const noexcept { return scm_; }

 protected:
  Completion complete(const PromptBundle& prompt, const GenParams& params) override;

 private:
  std::string respond(const PromptBundle& prompt, std::mt19937_64& rng) const;
  /// Samples the missing positions, then the answer. Symbols past the
  /// horizon are ignored.
  std::vector<std::string> finish(scm::SymbolChain chain, std::mt19937_64& rng,
                                  bool emit_steps) const;

  scm::ScmSpec scm_;
  std::mutex mutex_;
  std::mt19937_64 rng_;
};

}  // namespace cotprune
