#pragma once

#include <stdexcept>
#include <string>

namespace mfn {

// Base of every error raised by the library. The CLI maps the subclasses onto
// exit codes: validation-type errors exit with 1, runtime ones with 2.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class StatisticsError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class CheckpointError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class MetricsError : public Error { using Error::Error; };

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

} // namespace mfn
