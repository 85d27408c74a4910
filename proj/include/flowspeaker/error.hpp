#pragma once

#include <stdexcept>
#include <string>

namespace flowspeaker {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class SingularMatrix : public Error {
 public:
  using Error::Error;
};

class ZeroVector : public Error {
 public:
  using Error::Error;
};

class DegenerateChannel : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class UninitializedLayer : public Error {
 public:
  using Error::Error;
};

class CorpusError : public Error {
 public:
  using Error::Error;
};

class EmptyCorpus : public CorpusError {
 public:
  using CorpusError::CorpusError;
};

class UnknownTokens : public Error {
 public:
  explicit UnknownTokens(std::string tokens)
      : Error("unknown tokens: " + tokens), tokens_(std::move(tokens)) {}
  const std::string& tokens() const { return tokens_; }

 private:
  std::string tokens_;
};

class CorruptCheckpoint : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersion : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t step, const std::string& what)
      : Error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowspeaker
