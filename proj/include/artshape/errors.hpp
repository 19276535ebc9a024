#pragma once

#include <stdexcept>
#include <string>

namespace artshape {

// Input that violates a documented contract (bad config, inconsistent grids).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Missing or unreadable/unwritable files.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Optimization blew up (total loss exceeded the divergence bound).
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace artshape
