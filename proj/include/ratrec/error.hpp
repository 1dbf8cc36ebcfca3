#pragma once

#include <stdexcept>
#include <string>

namespace ratrec {

/// Root of every error the toolkit throws. The category drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  enum class Category { Precondition, Io, Format, Transport, Protocol, Config, Sampling };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what) : Error(Category::Precondition, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(Category::Io, what) {}
};

/// Model output that does not follow an expected textual contract
/// (annotation JSON, judge score line, tag grammar).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(Category::Format, what) {}
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field_path, const std::string& what)
      : Error(Category::Config, field_path + ": " + what), field_path_(std::move(field_path)) {}

  const std::string& field_path() const noexcept { return field_path_; }

 private:
  std::string field_path_;
};

class SamplingError : public Error {
 public:
  explicit SamplingError(const std::string& what) : Error(Category::Sampling, what) {}
};

/// Retries exhausted on a transient failure. status is 0 for connection errors and timeouts.
class TransportError : public Error {
 public:
  TransportError(int status, const std::string& what)
      : Error(Category::Transport, what), status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

/// Non-retryable rejection by the endpoint (4xx other than 429, or an unreadable body).
class ProtocolError : public Error {
 public:
  ProtocolError(int status, const std::string& what)
      : Error(Category::Protocol, what), status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace ratrec
