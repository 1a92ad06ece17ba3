#pragma once

#include <stdexcept>
#include <string>

namespace dtreg {

// A model reply that does not satisfy its output contract. Carries the raw
// text verbatim so the ledger can record exactly what was rejected.
class ContractViolation : public std::runtime_error {
 public:
  ContractViolation(std::string reason, std::string raw)
      : std::runtime_error(reason), reason_(std::move(reason)), raw_(std::move(raw)) {}

  const std::string& reason() const noexcept { return reason_; }
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string reason_;
  std::string raw_;
};

class DomainError : public std::domain_error {
  using std::domain_error::domain_error;
};

class DataIntegrityError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class CacheMiss : public std::runtime_error {
 public:
  explicit CacheMiss(std::string key)
      : std::runtime_error("cache miss in replay mode: " + key), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class ChecksumMismatch : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Retryable transport failure (network, 5xx, 429).
class TransientError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(std::string what, std::string trace)
      : std::runtime_error(std::move(what)), trace_(std::move(trace)) {}
  const std::string& trace() const noexcept { return trace_; }

 private:
  std::string trace_;
};

class RankDeficiency : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dtreg
