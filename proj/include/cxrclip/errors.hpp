#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cxrclip {

// Base for every failure the library reports on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class ZeroRow : public Error {
 public:
  explicit ZeroRow(std::size_t row)
      : Error("row " + std::to_string(row) + " has zero norm"), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// prompt grammar
class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t position, const std::string& what)
      : Error("syntax error at " + std::to_string(position) + ": " + what), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class UnresolvedSlot : public Error {
 public:
  using Error::Error;
};

class ExplosionError : public Error {
 public:
  using Error::Error;
};

class NoTemplate : public Error {
 public:
  using Error::Error;
};

class UnsupportedValue : public Error {
 public:
  using Error::Error;
};

class EmptyLabelSet : public Error {
 public:
  using Error::Error;
};

// sampler / images
class NoImages : public Error {
 public:
  using Error::Error;
};

class NoText : public Error {
 public:
  using Error::Error;
};

class BadImage : public Error {
 public:
  using Error::Error;
};

class EmptySequence : public Error {
 public:
  using Error::Error;
};

// Raised by the sampler with the offending study id prepended.
class StudyError : public Error {
 public:
  StudyError(std::string study_id, const std::string& what)
      : Error("study " + study_id + ": " + what), study_id_(std::move(study_id)) {}
  const std::string& study_id() const noexcept { return study_id_; }

 private:
  std::string study_id_;
};

// I/O and configuration
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimMismatch : public Error {
 public:
  using Error::Error;
};

class DegenerateLabels : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  explicit NumericError(std::int64_t step)
      : Error("non-finite loss at step " + std::to_string(step)), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

}  // namespace cxrclip
