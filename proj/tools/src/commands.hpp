#pragma once

#include <string>
#include <vector>

#include "run_config.hpp"

namespace lmd::cli {

// Each command writes its artifacts under config.output_dir and throws on
// failure. ConfigError marks problems with the configuration itself.
void cmd_pretrain(const RunConfig& config);
void cmd_finetune(const RunConfig& config);
void cmd_evaluate(const RunConfig& config);
void cmd_sample(const RunConfig& config);
void cmd_select_snapshot(const RunConfig& config);
void cmd_generate_synthetic(const RunConfig& config);

/// Full command line without the program name. Returns the exit status:
/// 0 on success, 2 for usage or configuration errors, 1 otherwise.
int run(const std::vector<std::string>& args);

}  // namespace lmd::cli
