#pragma once

#include <stdexcept>
#include <string>

namespace neursplit {

// Single exception type for contract violations (bad shapes, bad files,
// out-of-range indices). Messages name the offending object.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& what) { throw Error(what); }

inline void require(bool ok, const std::string& what) {
    if (!ok) fail(what);
}

} // namespace neursplit
