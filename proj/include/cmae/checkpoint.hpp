#pragma once

// model serialization: a human-readable manifest (version, config, free-form
// run metadata, parameter table) followed by raw little-endian float32
// parameter blobs in manifest order.

#include <map>
#include <string>

#include "cmae/model.hpp"

namespace cmae::checkpoint {

inline constexpr const char* kVersionLine = "cmae-checkpoint v1";

void save_checkpoint(const model::CmaeModel<float>& m, const std::string& path,
                     const std::map<std::string, std::string>& manifest = {});

struct LoadedCheckpoint {
    model::CmaeModel<float> model;
    std::map<std::string, std::string> manifest;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// variant that rejects checkpoints whose config differs from `expected`
// (IncompatibleCheckpoint), for callers that require a specific shape.
LoadedCheckpoint load_checkpoint(const std::string& path, const model::CmaeConfig& expected);

} // namespace cmae::checkpoint
