#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bspde {

enum class ErrorCode {
    invalid_argument,
    invalid_interval,
    ill_conditioned,
    unsupported_order,
    undefined_seminorm,
    assumption_violation,
    unsupported_closed_form,
    singular_regression,
    invalid_route,
    invalid_input,
    invalid_shift,
    divergence,
    io_error,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception carrying a machine-readable error category.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }
    /// Message without the category prefix.
    [[nodiscard]] const std::string& message() const noexcept { return message_; }

private:
    ErrorCode code_;
    std::string message_;
};

}  // namespace bspde
