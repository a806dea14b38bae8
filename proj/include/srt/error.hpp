// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

namespace srt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent violation in a numeric kernel or in model plumbing.
class DimError : public Error {
 public:
  using Error::Error;
};

// On-disk format violation: bad magic, bad version, truncation.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Wire-protocol violation between workers (bad frame, length mismatch).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Transport failure: connect, accept, disconnect, timeout.
class CommError : public Error {
 public:
  using Error::Error;
};

// Invalid user-facing configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace srt
