#pragma once

#include <string>

#include "cmwm/attacks.hpp"
#include "cmwm/train.hpp"

namespace cmwm {

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& json_text);
TrainConfig train_config_from_file(const std::string& path);

std::string attack_config_to_json(const AttackConfig& cfg);
AttackConfig attack_config_from_json(const std::string& json_text);

}  // namespace cmwm
