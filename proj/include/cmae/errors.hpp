#pragma once

#include <stdexcept>
#include <string>

namespace cmae {

// every failure the pipeline can report, as a closed enum so callers and the
// CLI can match on identity instead of parsing message text.
enum class ErrorCode {
    // data
    InvalidHexLength,
    InvalidHexDigit,
    UnknownLabel,
    ParseError,
    InvalidRatio,
    InsufficientClassSamples,
    InvalidSpec,
    NotAPcap,
    TruncatedCapture,
    // tokenize
    InvalidTokenMap,
    InvalidVocab,
    UnknownToken,
    // embed
    EmptyVocabulary,
    CorruptEmbeddingFile,
    InvalidSelection,
    // nncore / cmae
    ShapeError,
    ConfigError,
    NumericalError,
    GraphError,
    // train
    IncompatibleCheckpoint,
    CorruptCheckpoint,
    // eval
    InputError,
    // cli / misc
    IoError,
    BadConfig,
};

const char* error_code_name(ErrorCode code);

// single exception type carrying the code; message is human-readable context
// (offsets, row numbers, packet indices) specific to the failing operation.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace cmae
