#pragma once

#include <stdexcept>
#include <string>

namespace deepself {

/// Root of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an API precondition (non-scalar loss, empty sequence, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration: filter cutoffs, conv geometry, Table-style
/// hyperparameter domains, sample-rate mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced or encountered.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Metric is undefined for the given input (e.g. UAR with no true instances).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// File does not look like the expected format (bad magic, malformed header).
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

/// Leading magic bytes are not the expected ones.
class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Recognised container, but a variant we do not read (float WAV, color PGM).
class UnsupportedFormatError : public FormatError {
 public:
  using FormatError::FormatError;
};

class UnsupportedBitDepthError : public FormatError {
 public:
  using FormatError::FormatError;
};

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Content parsed, but disagrees with itself (parameter count/shape vs. spec).
class IntegrityError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Text that failed to parse; message cites row/column.
class ParseError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace deepself
