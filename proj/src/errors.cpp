#include "mmv/errors.hpp"

namespace mmv {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::DegenerateVolatility: return "DegenerateVolatility";
        case ErrorCode::NonPositiveTheta: return "NonPositiveTheta";
        case ErrorCode::InvalidModel: return "InvalidModel";
        case ErrorCode::SingularGram: return "SingularGram";
        case ErrorCode::TimeOutOfRange: return "TimeOutOfRange";
        case ErrorCode::NoConvergence: return "NoConvergence";
        case ErrorCode::NonPositiveY: return "NonPositiveY";
        case ErrorCode::PositivityLost: return "PositivityLost";
        case ErrorCode::RegressionIllConditioned: return "RegressionIllConditioned";
        case ErrorCode::InvalidBound: return "InvalidBound";
        case ErrorCode::ExplodedPath: return "ExplodedPath";
        case ErrorCode::MissingTrajectories: return "MissingTrajectories";
        case ErrorCode::SaddleViolated: return "SaddleViolated";
        case ErrorCode::AdversaryNotZero: return "AdversaryNotZero";
        case ErrorCode::UnboundedAdversary: return "UnboundedAdversary";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    }
    return "Unknown";
}

}  // namespace mmv
