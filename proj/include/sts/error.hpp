#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace sts {

// Base error for everything the library throws. `code` is a short
// machine-readable tag surfaced by the CLI error JSON; `context` carries
// free-form detail (offending rows, last iterate, ...).
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message, std::string context = {})
      : std::runtime_error(message), code_(std::move(code)), context_(std::move(context)) {}

  const std::string& code() const noexcept { return code_; }
  const std::string& context() const noexcept { return context_; }

 private:
  std::string code_;
  std::string context_;
};

// Argument outside the mean space / support / parameter space of a family.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& message, std::string context = {})
      : Error("domain_error", message, std::move(context)) {}
};

class RankError : public Error {
 public:
  explicit RankError(const std::string& message, std::string context = {})
      : Error("rank_deficient", message, std::move(context)) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message, std::string context = {})
      : Error("config_error", message, std::move(context)) {}
};

class LoadError : public Error {
 public:
  explicit LoadError(const std::string& message, std::string context = {})
      : Error("load_error", message, std::move(context)) {}
};

}  // namespace sts
