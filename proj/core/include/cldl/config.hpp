#pragma once

#include <cstdint>
#include <string>

#include "cldl/trainer.hpp"

namespace cldl {

// Run settings parsed from a flat key=value file ('#' and ';' start
// comments). Training keys mirror TrainConfig; the rest steer data location
// and attack evaluation.
struct AppConfig {
  TrainConfig train;
  std::string data_dir = "data";
  std::int64_t eval_count = 2000;    // examples scored by attack/eval runs
  std::int64_t attack_batch = 256;   // eval batch size
  std::int64_t attack_steps = 10;    // iterations for bim/pgd/mim
  double attack_step_size = 0.0;     // 0 = epsilon / 5
  double attack_momentum = 1.0;
  std::string attack_loss = "cross-entropy";
};

// Throws config_error on unreadable files, malformed lines, unknown keys,
// or unparsable values. Later occurrences of a key override earlier ones.
AppConfig parse_config_file(const std::string& path);

// Same grammar from an in-memory string; `origin` names the source in
// error messages.
AppConfig parse_config_text(const std::string& text, const std::string& origin);

}  // namespace cldl
