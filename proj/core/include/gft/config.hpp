#pragma once

#include <map>
#include <string>

#include "gft/model.hpp"
#include "gft/train.hpp"

namespace gft {

// Plain "key = value" UTF-8 file; '#' starts a comment, blank lines ignored.
std::map<std::string, std::string> parse_kv_file(const std::string& path);

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

// Applies recognized keys onto the defaults; unknown keys are a ConfigError.
RunConfig run_config_from_kv(const std::map<std::string, std::string>& kv);
RunConfig load_run_config(const std::string& path);

}  // namespace gft
