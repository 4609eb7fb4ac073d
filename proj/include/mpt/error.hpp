#pragma once

#include <stdexcept>
#include <string>

namespace mpt {

/// Base of every error raised by the library. `category()` is a stable,
/// machine-parsable token used by the CLI for its one-line failure report.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

#define MPT_DEFINE_ERROR(Name, token)                                    \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(token, what) {}       \
  };

MPT_DEFINE_ERROR(DimensionError, "dimension")
MPT_DEFINE_ERROR(ValidationError, "validation")
MPT_DEFINE_ERROR(NumericalError, "numerical")
MPT_DEFINE_ERROR(ContractError, "contract")
MPT_DEFINE_ERROR(ConfigError, "config")
MPT_DEFINE_ERROR(CacheMissError, "cache_miss")
MPT_DEFINE_ERROR(DivergenceError, "divergence")
MPT_DEFINE_ERROR(ParseError, "parse")
MPT_DEFINE_ERROR(IoError, "io")
MPT_DEFINE_ERROR(UsageError, "usage")
MPT_DEFINE_ERROR(SequenceOverflowError, "sequence_overflow")
MPT_DEFINE_ERROR(GeneratorError, "generator")

#undef MPT_DEFINE_ERROR

}  // namespace mpt
