#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mmv {

enum class ErrorCode {
    DimensionMismatch,
    DegenerateVolatility,
    NonPositiveTheta,
    InvalidModel,
    SingularGram,
    TimeOutOfRange,
    NoConvergence,
    NonPositiveY,
    PositivityLost,
    RegressionIllConditioned,
    InvalidBound,
    ExplodedPath,
    MissingTrajectories,
    SaddleViolated,
    AdversaryNotZero,
    UnboundedAdversary,
    ConfigInvalid,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// false-branch helper so call sites read as a precondition
inline void require(bool ok, ErrorCode code, const std::string& what) {
    if (!ok) throw Error(code, what);
}

}  // namespace mmv
