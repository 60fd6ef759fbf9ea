#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nebula {

// Invalid argument values or malformed inputs.
class DomainError : public std::invalid_argument {
public:
    explicit DomainError(const std::string& what) : std::invalid_argument(what) {}
};

// A requested allocation or cache would exceed a configured cap.
class ResourceError : public std::runtime_error {
public:
    explicit ResourceError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure during model fitting, e.g. a SNP whose likelihood is zero
// at every grid point. Carries the offending SNP index when known.
class FitError : public std::runtime_error {
public:
    explicit FitError(const std::string& what, std::size_t snp_index = npos)
        : std::runtime_error(what), snp_index_(snp_index) {}

    std::size_t snp_index() const { return snp_index_; }
    bool has_snp_index() const { return snp_index_ != npos; }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

private:
    std::size_t snp_index_;
};

// Numerical failure while scoring a subject.
class ScoringError : public std::runtime_error {
public:
    explicit ScoringError(const std::string& what, std::size_t snp_index = FitError::npos)
        : std::runtime_error(what), snp_index_(snp_index) {}

    std::size_t snp_index() const { return snp_index_; }

private:
    std::size_t snp_index_;
};

// Unreadable/unwritable files or malformed tables.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Inconsistent run configuration.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace nebula
