#pragma once

#include <stdexcept>
#include <string>

namespace tandem {

/// Invalid experiment or environment configuration. `key()` names the
/// offending setting when one can be identified.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& message, std::string key = {})
      : std::runtime_error(message), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// A precondition of an API call was violated (bad shape, bad index, call
/// order).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tandem
