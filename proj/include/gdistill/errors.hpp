#pragma once

#include <stdexcept>
#include <string>

namespace gdistill {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
public:
    using Error::Error;
};

/// ᾱ_t too close to 0 (or 1) for the one-step denoiser or the L2 scale.
class DegenerateTimestep : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class InternalConsistencyError : public Error {
public:
    using Error::Error;
};

class InvalidRequest : public Error {
public:
    using Error::Error;
};

class FeatureUnavailable : public Error {
public:
    using Error::Error;
};

/// The guidance provider could not produce a response (transport failure,
/// timeout, or a response that violates the wire protocol).
class GuidanceUnavailable : public Error {
public:
    using Error::Error;
};

class ProtocolError : public GuidanceUnavailable {
public:
    using GuidanceUnavailable::GuidanceUnavailable;
};

class VersionMismatch : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

/// Checkpoint could not be written; carries the last good checkpoint path.
class CheckpointError : public IoError {
public:
    CheckpointError(const std::string& what, std::string last_good)
        : IoError(what), last_good_(std::move(last_good)) {}

    const std::string& last_good() const noexcept { return last_good_; }

private:
    std::string last_good_;
};

} // namespace gdistill
