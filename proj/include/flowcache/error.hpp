// Copyright (C) 2026 FlowCache-sim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace flowcache {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad argument to a kernel or operation.
class InvalidInput : public Error {
public:
    using Error::Error;
};

// Bad configuration; message carries the offending field path when known.
class InvalidConfig : public Error {
public:
    using Error::Error;
};

// Evaluation at a point where p/t is undefined (t <= 0).
class Singularity : public Error {
public:
    using Error::Error;
};

// Input is well-formed but numerically degenerate (zero norms).
class DegenerateInput : public Error {
public:
    using Error::Error;
};

class InvalidComparison : public Error {
public:
    using Error::Error;
};

class InternalError : public Error {
public:
    using Error::Error;
};

}  // namespace flowcache
