#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cotprune {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Transport failure that survived every retry.
class BackendUnavailable : public Error {
 public:
  using Error::Error;
};

/// A scripted backend received a prompt no rule matched and has no fallback.
class ScriptError : public Error {
 public:
  using Error::Error;
};

/// The base model could not produce a usable answer for the sufficiency check.
class PsIndeterminate : public Error {
 public:
  using Error::Error;
};

/// A causal-oracle query referenced a symbol or prefix the model does not define.
class InvalidQuery : public Error {
 public:
  using Error::Error;
};

class FixtureParseError : public Error {
 public:
  FixtureParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Too many malformed lines in an input file.
class MalformedInput : public Error {
 public:
  using Error::Error;
};

class RejectedTrace : public Error {
 public:
  explicit RejectedTrace(std::vector<std::string> offenders);
  const std::vector<std::string>& offenders() const noexcept { return offenders_; }

 private:
  std::vector<std::string> offenders_;
};

}  // namespace cotprune
