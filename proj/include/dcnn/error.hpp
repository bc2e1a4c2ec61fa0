#pragma once

#include <stdexcept>
#include <string>

namespace dcnn {

/// Base of every error raised by the library. `kind()` is a stable, machine
/// readable category used by the command-line tool for structured messages.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define DCNN_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(tag, what) {}      \
  };

DCNN_DEFINE_ERROR(ParseError, "parse")
DCNN_DEFINE_ERROR(FormatError, "format")
DCNN_DEFINE_ERROR(LengthError, "length")
DCNN_DEFINE_ERROR(UnsupportedFormat, "unsupported-format")
DCNN_DEFINE_ERROR(MetadataError, "metadata")
DCNN_DEFINE_ERROR(ParameterError, "parameter")
DCNN_DEFINE_ERROR(ShapeError, "shape")
DCNN_DEFINE_ERROR(IncompatibleArchitecture, "incompatible-architecture")
DCNN_DEFINE_ERROR(TrainingError, "training")
DCNN_DEFINE_ERROR(SamplingError, "sampling")
DCNN_DEFINE_ERROR(UndefinedMetric, "undefined-metric")
DCNN_DEFINE_ERROR(ConfigError, "configuration")
DCNN_DEFINE_ERROR(IoError, "io")

#undef DCNN_DEFINE_ERROR

}  // namespace dcnn
