#pragma once

#include <stdexcept>
#include <string>

namespace traj {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A value lies outside its admissible domain (e.g. latitude beyond +/-85 deg).
class DomainError : public Error {
public:
    using Error::Error;
};

/// A precondition on arguments was violated (empty input, mismatched sizes, ...).
class InvalidInput : public Error {
public:
    using Error::Error;
};

/// The least-squares system is numerically rank deficient.
class RankDeficientError : public Error {
public:
    using Error::Error;
};

/// Not enough sensor data around a requested grid time.
class InsufficientCoverageError : public Error {
public:
    using Error::Error;
};

/// Bracketing sensor samples are too far apart, or the newest sample is stale.
class SensorGapError : public Error {
public:
    using Error::Error;
};

/// The runtime has not yet accumulated a full 8-frame window.
class WarmingUpError : public Error {
public:
    using Error::Error;
};

/// GPS dropped out before any model prediction existed to coast on.
class NoPriorPredictionError : public Error {
public:
    using Error::Error;
};

/// The Kalman innovation covariance is numerically singular.
class SingularInnovationError : public Error {
public:
    using Error::Error;
};

/// A non-finite value appeared in an activation, gradient, or loss.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// A file could not be opened or read.
class FileError : public Error {
public:
    using Error::Error;
};

/// A line of an input file failed to parse. Carries the 1-based line number.
class MalformedFileError : public Error {
public:
    MalformedFileError(const std::string& what, long line)
        : Error(what), line_number(line) {}
    long line_number;
};

/// A file declares a format version this build does not understand.
class VersionMismatchError : public Error {
public:
    using Error::Error;
};

} // namespace traj
