#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace admd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or spec field. Carries every problem found, not just the first.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  explicit ConfigError(const std::string& problem)
      : ConfigError(std::vector<std::string>{problem}) {}

  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Loss went non-finite or a training loop could not proceed.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::string last_good_checkpoint = {})
      : Error(what), last_good_checkpoint_(std::move(last_good_checkpoint)) {}

  const std::string& last_good_checkpoint() const noexcept { return last_good_checkpoint_; }

 private:
  std::string last_good_checkpoint_;
};

/// A pipeline stage was requested before the stage it depends on.
class DependencyError : public Error {
 public:
  using Error::Error;
};

class ReportError : public Error {
 public:
  using Error::Error;
};

}  // namespace admd
