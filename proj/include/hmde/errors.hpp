#pragma once

#include <stdexcept>
#include <string>

namespace hmde {

// Shape/dimension violations (matmul mismatch, bad rank).
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated call contract (empty input, non-scalar loss, missing grad).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad parameter value (tau <= 0, target count too large).
struct ParameterError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Zero-norm vector fed to a cosine.
struct DegenerateVectorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Corpus-level consistency violations (duplicate ids, dangling references).
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint / serialized-file format violations.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Token id outside the vocabulary or sequence too long.
struct VocabularyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hmde
