#pragma once

#include <stdexcept>
#include <string>

namespace bmd {

/// Malformed or unreadable pipeline configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A stage input produced by an upstream stage is absent.
class MissingArtifact : public std::runtime_error {
public:
    explicit MissingArtifact(const std::string& path)
        : std::runtime_error("missing artifact: " + path), path_(path) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace bmd
