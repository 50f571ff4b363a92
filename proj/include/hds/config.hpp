#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "hds/loss.hpp"
#include "hds/model.hpp"
#include "hds/trainer.hpp"

namespace hds {

/// Everything a training run needs besides data.
struct RunConfig {
  ArchConfig arch;
  LossWeights loss;
  TrainConfig train;
};

/// 45-layer network, full schedule, 512 x 384 patches.
RunConfig paper_preset();
/// Three-scale network, 200 epochs, 128 x 128 patches, batch 1, alpha 0.3,
/// gradient clipping at norm 5.
RunConfig desk_preset();
/// "paper" or "desk".
RunConfig preset(const std::string& name);

/// Switches the mode; eta entries follow their levels when supervision shrinks.
void set_mode(RunConfig& config, Mode mode);

void validate(const RunConfig& config);

nlohmann::json to_json(const RunConfig& config);

/// `j` overrides fields of `base`. Sections are "arch", "loss" and "train".
/// Unknown keys and mistyped values raise ValueError naming the field.
RunConfig merge_json(const RunConfig& base, const nlohmann::json& j);

RunConfig load_config_file(const std::filesystem::path& path, const RunConfig& base);

}  // namespace hds
