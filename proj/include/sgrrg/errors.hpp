#pragma once

#include <stdexcept>
#include <string>

namespace sgrrg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyGraph : public Error {
 public:
  EmptyGraph() : Error("scene graph has no objects") {}
};

class MalformedAttribute : public Error {
 public:
  explicit MalformedAttribute(const std::string& raw)
      : Error("attribute does not match its template: '" + raw + "'"), raw_(raw) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class DegenerateBox : public Error {
 public:
  using Error::Error;
};

class GammaOutOfRange : public Error {
 public:
  GammaOutOfRange(int gamma, int slots)
      : Error("gamma " + std::to_string(gamma) + " outside [1, " + std::to_string(slots) + "]") {}
};

class UnknownCategory : public Error {
 public:
  explicit UnknownCategory(int category)
      : Error("unknown anatomical category " + std::to_string(category)) {}
};

class LengthMismatch : public Error {
 public:
  using Error::Error;
};

class EmptyCorpus : public Error {
 public:
  EmptyCorpus() : Error("cannot build a vocabulary from an empty corpus") {}
};

/// Raised while reading JSON-lines input; `line` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public Error {
 public:
  SchemaError(std::size_t line, const std::string& field, const std::string& what)
      : Error("line " + std::to_string(line) + ", field '" + field + "': " + what),
        line_(line),
        field_(field) {}
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class NonFiniteLoss : public Error {
 public:
  explicit NonFiniteLoss(const std::string& component)
      : Error("non-finite loss component: " + component), component_(component) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

}  // namespace sgrrg
