#include "cmae/errors.hpp"

namespace cmae {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidHexLength: return "InvalidHexLength";
        case ErrorCode::InvalidHexDigit: return "InvalidHexDigit";
        case ErrorCode::UnknownLabel: return "UnknownLabel";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::InvalidRatio: return "InvalidRatio";
        case ErrorCode::InsufficientClassSamples: return "InsufficientClassSamples";
        case ErrorCode::InvalidSpec: return "InvalidSpec";
        case ErrorCode::NotAPcap: return "NotAPcap";
        case ErrorCode::TruncatedCapture: return "TruncatedCapture";
        case ErrorCode::InvalidTokenMap: return "InvalidTokenMap";
        case ErrorCode::InvalidVocab: return "InvalidVocab";
        case ErrorCode::UnknownToken: return "UnknownToken";
        case ErrorCode::EmptyVocabulary: return "EmptyVocabulary";
        case ErrorCode::CorruptEmbeddingFile: return "CorruptEmbeddingFile";
        case ErrorCode::InvalidSelection: return "InvalidSelection";
        case ErrorCode::ShapeError: return "ShapeError";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::NumericalError: return "NumericalError";
        case ErrorCode::GraphError: return "GraphError";
        case ErrorCode::IncompatibleCheckpoint: return "IncompatibleCheckpoint";
        case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
        case ErrorCode::InputError: return "InputError";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::BadConfig: return "BadConfig";
    }
    return "UnknownError";
}

} // namespace cmae
