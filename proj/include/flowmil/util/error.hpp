#pragma once

#include <stdexcept>
#include <string>

namespace flowmil {

/// Error with a stable machine-readable code. The CLI prints failures as
/// "error: <code>: <message>" on stderr and exits nonzero.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const { return code_; }

private:
    std::string code_;
};

}  // namespace flowmil
