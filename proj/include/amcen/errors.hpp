#pragma once

#include <stdexcept>
#include <string>

namespace amcen {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or missing input data (files, lines, ids).
class DataError : public Error {
public:
    using Error::Error;
};

/// Arguments that violate an operation's preconditions.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Snapshots absorbed out of chronological order.
class SequencingError : public Error {
public:
    using Error::Error;
};

/// A read asked for history the index has not absorbed yet.
class StalenessError : public Error {
public:
    using Error::Error;
};

/// Broken internal contract, e.g. an update aimed at a frozen parameter.
class ContractViolation : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace amcen
