// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace i2c2w {

// Base type for everything the library throws on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct UnknownSymbol : Error {
  explicit UnknownSymbol(char c)
      : Error(std::string("unknown symbol '") + c + "'") {}
};

struct WordTooLong : Error {
  WordTooLong(std::size_t len, std::size_t max_len)
      : Error("word of length " + std::to_string(len) + " exceeds maximum " +
              std::to_string(max_len)) {}
};

struct EmptyWord : Error {
  EmptyWord() : Error("word is empty after normalization") {}
};

struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& msg)
      : Error("shape mismatch: " + msg) {}
};

struct BadDim : Error {
  explicit BadDim(const std::string& msg) : Error("bad dimension: " + msg) {}
};

struct NonFinite : Error {
  explicit NonFinite(const std::string& msg)
      : Error("non-finite value: " + msg) {}
};

struct InfeasibleTarget : Error {
  explicit InfeasibleTarget(const std::string& msg)
      : Error("infeasible target: " + msg) {}
};

struct EmptyBatch : Error {
  EmptyBatch() : Error("empty batch") {}
};

struct EmptyDataset : Error {
  EmptyDataset() : Error("empty dataset") {}
};

struct IOFailure : Error {
  explicit IOFailure(const std::string& msg) : Error("i/o failure: " + msg) {}
};

struct BadMagic : Error {
  explicit BadMagic(const std::string& msg) : Error("bad magic: " + msg) {}
};

struct VersionMismatch : Error {
  explicit VersionMismatch(const std::string& msg)
      : Error("version mismatch: " + msg) {}
};

struct CorruptBlob : Error {
  explicit CorruptBlob(const std::string& msg)
      : Error("corrupt checkpoint: " + msg) {}
};

struct DivergenceDetected : Error {
  explicit DivergenceDetected(const std::string& msg)
      : Error("training diverged: " + msg) {}
};

}  // namespace i2c2w
