#pragma once

#include <stdexcept>
#include <string>

namespace llmfs {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class PromptError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

/// The scripted backend has no entry for a request.
class UnscriptedRequestError : public BackendError {
 public:
  using BackendError::BackendError;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class UnmatchedConceptError : public ParseError {
 public:
  UnmatchedConceptError(const std::string& text)
      : ParseError("unmatched concept: \"" + text + "\""), text_(text) {}
  const std::string& text() const noexcept { return text_; }

 private:
  std::string text_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace llmfs
