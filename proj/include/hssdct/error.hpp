#pragma once

#include <stdexcept>
#include <string>

namespace hssdct {

enum class ErrorKind {
  Dimension,
  Config,
  Usage,
  Format,
  Metric,
  Checkpoint,
  Training,
  Bench,
  Io,
};

/// Base of every error thrown by the library. `kind()` drives the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define HSSDCT_DEFINE_ERROR(Name, Kind)                              \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(Kind, what) {}    \
  };

HSSDCT_DEFINE_ERROR(DimensionError, ErrorKind::Dimension)
HSSDCT_DEFINE_ERROR(ConfigError, ErrorKind::Config)
HSSDCT_DEFINE_ERROR(UsageError, ErrorKind::Usage)
HSSDCT_DEFINE_ERROR(FormatError, ErrorKind::Format)
HSSDCT_DEFINE_ERROR(MetricError, ErrorKind::Metric)
HSSDCT_DEFINE_ERROR(CheckpointError, ErrorKind::Checkpoint)
HSSDCT_DEFINE_ERROR(TrainingError, ErrorKind::Training)
HSSDCT_DEFINE_ERROR(BenchError, ErrorKind::Bench)
HSSDCT_DEFINE_ERROR(IoError, ErrorKind::Io)

#undef HSSDCT_DEFINE_ERROR

const char* to_string(ErrorKind kind) noexcept;

}  // namespace hssdct
