#pragma once

#include <stdexcept>
#include <string>

namespace casdc {

// Base for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad experiment / training configuration (missing known unknowns, margin
// out of range, malformed config file, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Partition or split inconsistencies: invalid partition sizes, classes
// missing from a source dataset, role mismatches.
class DataError : public Error {
 public:
  using Error::Error;
};

// Unreadable or unwritable files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Structurally broken file contents (truncated container, bad IDX magic,
// shape mismatch). Loaders throw this without producing partial datasets.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Tensor dimension mismatches between models and inputs.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Triplet mining preconditions (too few known-known or known-unknown
// samples in a batch).
class MiningError : public Error {
 public:
  using Error::Error;
};

// Divergence or other failures inside a training loop.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Metrics that are undefined for the given input (e.g. AUROC with a single
// class present).
class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace casdc
