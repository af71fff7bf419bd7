#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefillsim {

// Bad presets, flags, or arguments that violate an operation's precondition.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A request does not fit in the memory budget of the selected engine variant.
class CapacityError : public std::runtime_error {
 public:
  CapacityError(const std::string& what, std::vector<std::uint64_t> offending_ids = {})
      : std::runtime_error(what), offending_ids_(std::move(offending_ids)) {}

  const std::vector<std::uint64_t>& offending_ids() const noexcept { return offending_ids_; }

 private:
  std::vector<std::uint64_t> offending_ids_;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by PrefixCache::evict_to when protected blocks pin too much of the cache.
class CacheShortfall : public std::runtime_error {
 public:
  CacheShortfall(const std::string& what, std::size_t shortfall_tokens)
      : std::runtime_error(what), shortfall_tokens_(shortfall_tokens) {}

  std::size_t shortfall_tokens() const noexcept { return shortfall_tokens_; }

 private:
  std::size_t shortfall_tokens_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace prefillsim
