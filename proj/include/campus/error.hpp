#pragma once

#include <stdexcept>
#include <string>

namespace campus {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data: malformed JSONL lines, invariant violations in samples.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration values (scope parameters, scorer settings, flags).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A metric could not be computed for a sample.
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during training (non-finite loss, exploded step).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Any failure originating in a competence probe.
class ProbeError : public Error {
 public:
  using Error::Error;
};

class ProbeConnectError : public ProbeError {
 public:
  using ProbeError::ProbeError;
};

class ProbeHandshakeError : public ProbeError {
 public:
  using ProbeError::ProbeError;
};

class ProbeProtocolError : public ProbeError {
 public:
  using ProbeError::ProbeError;
};

class ProbeTimeoutError : public ProbeError {
 public:
  using ProbeError::ProbeError;
};

/// The remote side answered {"ok":false,"error":...}.
class ProbeRemoteError : public ProbeError {
 public:
  using ProbeError::ProbeError;
};

}  // namespace campus
