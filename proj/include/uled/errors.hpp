#pragma once

#include <stdexcept>
#include <string>

namespace uled {

// Error taxonomy shared across the library. Every category maps to one
// machine-readable code used by the CLI's single-line error records.
struct Error : std::runtime_error {
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code(std::move(code)) {}
  std::string code;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("shape", m) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& m) : Error("numerical", m) {}
};

struct EmptyBatchError : Error {
  explicit EmptyBatchError(const std::string& m) : Error("empty_batch", m) {}
};

struct UninitializedError : Error {
  explicit UninitializedError(const std::string& m) : Error("uninitialized", m) {}
};

struct VocabularyError : Error {
  explicit VocabularyError(const std::string& m) : Error("vocabulary", m) {}
};

struct LengthError : Error {
  explicit LengthError(const std::string& m) : Error("length", m) {}
};

struct NoLabelError : Error {
  explicit NoLabelError(const std::string& m) : Error("no_label", m) {}
};

struct TrainingError : Error {
  explicit TrainingError(const std::string& m) : Error("training", m) {}
};

struct GenerationError : Error {
  explicit GenerationError(const std::string& m) : Error("generation", m) {}
};

struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error("parse", m) {}
};

struct EncodingError : Error {
  explicit EncodingError(const std::string& m) : Error("encoding", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

}  // namespace uled
