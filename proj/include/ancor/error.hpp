#pragma once

#include <stdexcept>
#include <string>

namespace ancor {

// Base for every error raised by the library. The CLI maps the category to
// a process exit code (see exit_code_for).
class Error : public std::runtime_error {
 public:
  enum class Category { Config, Numeric, Io };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(Category::Numeric, what) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& what) : Error(Category::Numeric, what) {}
};

// ||x|| at or below eps_norm where a direction is required.
class DegenerateVectorError : public Error {
 public:
  explicit DegenerateVectorError(const std::string& what) : Error(Category::Numeric, what) {}
};

// x-hat coincides with the class-weight direction in angular normalization.
class ParallelDegenerateError : public Error {
 public:
  explicit ParallelDegenerateError(const std::string& what) : Error(Category::Numeric, what) {}
};

class EvaluationError : public Error {
 public:
  explicit EvaluationError(const std::string& what) : Error(Category::Numeric, what) {}
};

class NormalizationContractError : public Error {
 public:
  explicit NormalizationContractError(const std::string& what) : Error(Category::Numeric, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::Config, what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(Category::Config, what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error(Category::Config, what) {}
};

class EpisodeError : public Error {
 public:
  explicit EpisodeError(const std::string& what) : Error(Category::Config, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(Category::Io, what) {}
};

class CheckpointError : public Error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, ShapeMismatch, MissingArray };

  CheckpointError(Kind kind, const std::string& what) : Error(Category::Io, what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// Stable CLI contract: 0 success, 2 config, 3 numeric/degenerate, 4 IO.
inline int exit_code_for(const Error& e) {
  switch (e.category()) {
    case Error::Category::Config: return 2;
    case Error::Category::Numeric: return 3;
    case Error::Category::Io: return 4;
  }
  return 1;
}

}  // namespace ancor
