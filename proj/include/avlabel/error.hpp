#pragma once

#include <stdexcept>
#include <string>

namespace avlabel {

/// Base for every error raised by the library. `stage` names the pipeline
/// stage that failed so the CLI can report it.
class Error : public std::runtime_error {
 public:
  Error(std::string stage, const std::string& what)
      : std::runtime_error(what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Bad parameters, duplicate rules, unreadable config files. Maps to exit code 2.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

class MalformedRecord : public Error {
 public:
  explicit MalformedRecord(const std::string& what) : Error("report", what) {}
};

class EmptyDetection : public Error {
 public:
  explicit EmptyDetection(const std::string& what) : Error("parse", what) {}
};

class UndefinedToken : public Error {
 public:
  explicit UndefinedToken(const std::string& what) : Error("alias", what) {}
};

class InferenceError : public Error {
 public:
  explicit InferenceError(const std::string& what) : Error("inference", what) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error("confidence", what) {}
};

class ScoringError : public Error {
 public:
  explicit ScoringError(const std::string& what) : Error("confidence", what) {}
};

class EvaluationError : public Error {
 public:
  explicit EvaluationError(const std::string& what) : Error("evaluate", what) {}
};

}  // namespace avlabel
