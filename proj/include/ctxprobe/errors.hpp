// Copyright (C) 2026 ctxprobe contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef CTXPROBE_ERRORS_HPP
#define CTXPROBE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace ctxprobe {

/// Base of every error raised by the library. `error_class()` is the stable,
/// machine-readable name the CLI prints; `what()` is for humans.
class Error : public std::runtime_error {
 public:
  Error(std::string error_class, const std::string& message)
      : std::runtime_error(message), error_class_(std::move(error_class)) {}

  const std::string& error_class() const noexcept { return error_class_; }

 private:
  std::string error_class_;
};

/// Bad or inconsistent input data. The CLI maps these to exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A broken internal invariant. The CLI maps these to exit code 4.
class InvariantViolation : public Error {
 public:
  explicit InvariantViolation(const std::string& message)
      : Error("InvariantViolation", message) {}
};

#define CTXPROBE_DEFINE_DATA_ERROR(Name)                               \
  class Name : public DataError {                                      \
   public:                                                             \
    explicit Name(const std::string& message) : DataError(#Name, message) {} \
  };

CTXPROBE_DEFINE_DATA_ERROR(InvalidArgument)
CTXPROBE_DEFINE_DATA_ERROR(TokenAlignmentError)
CTXPROBE_DEFINE_DATA_ERROR(ZeroContextMass)
CTXPROBE_DEFINE_DATA_ERROR(ZeroMass)
CTXPROBE_DEFINE_DATA_ERROR(SingleClassError)
CTXPROBE_DEFINE_DATA_ERROR(NonFiniteFeature)
CTXPROBE_DEFINE_DATA_ERROR(DimensionMismatch)
CTXPROBE_DEFINE_DATA_ERROR(NoPositiveSentence)
CTXPROBE_DEFINE_DATA_ERROR(InsufficientNegatives)
CTXPROBE_DEFINE_DATA_ERROR(MissingModelAnswer)
CTXPROBE_DEFINE_DATA_ERROR(MissingDatasetTag)
CTXPROBE_DEFINE_DATA_ERROR(MissingDump)
CTXPROBE_DEFINE_DATA_ERROR(ChunkMisalignment)
CTXPROBE_DEFINE_DATA_ERROR(EmptyGolds)
CTXPROBE_DEFINE_DATA_ERROR(IdMismatch)
CTXPROBE_DEFINE_DATA_ERROR(CorruptHeader)
CTXPROBE_DEFINE_DATA_ERROR(PayloadLengthMismatch)
CTXPROBE_DEFINE_DATA_ERROR(UnsupportedVersion)
CTXPROBE_DEFINE_DATA_ERROR(InvalidDump)
CTXPROBE_DEFINE_DATA_ERROR(SpecOutOfRange)
CTXPROBE_DEFINE_DATA_ERROR(MalformedRecord)

#undef CTXPROBE_DEFINE_DATA_ERROR

}  // namespace ctxprobe

#endif  // CTXPROBE_ERRORS_HPP
