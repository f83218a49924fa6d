#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace birr {

// Shapes of two operands disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An invalid configuration value (model, dropout rate, mask length, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Persistent layer state is corrupt, e.g. non-positive running variance.
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An API was called out of order, e.g. backward without a recorded forward.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Image bytes do not start with a known magic.
class UnsupportedFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Image bytes carry a known magic but are malformed.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Base of the weight-file load failures.
class WeightFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BadMagicError : public WeightFormatError {
 public:
  using WeightFormatError::WeightFormatError;
};

class ShapeMismatchError : public WeightFormatError {
 public:
  ShapeMismatchError(std::string tensor_name, const std::string& what)
      : WeightFormatError(what), tensor_name_(std::move(tensor_name)) {}
  const std::string& tensor_name() const { return tensor_name_; }

 private:
  std::string tensor_name_;
};

class TruncatedFileError : public WeightFormatError {
 public:
  using WeightFormatError::WeightFormatError;
};

// Training produced a non-finite loss.
// Dataset-level problems: empty trees, undersized classes, bad split files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A single dataset item failed to load.
class ItemError : public DataError {
 public:
  ItemError(std::string path, const std::string& what)
      : DataError(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int epoch, int batch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }

 private:
  int epoch_;
  int batch_;
};

}  // namespace birr
