// JSON run configuration covering every pipeline stage. Unknown keys are
// rejected; the resolved config is echoed into output directories.
#pragma once

#include "mmger/lm.hpp"
#include "mmger/synthdata.hpp"
#include "mmger/trainer.hpp"

#include <nlohmann/json.hpp>
#include <string>

namespace mmger {

struct AblationPreset {
  int epochs = -1;      // -1: inherit trainer setting
  int train_utts = -1;  // -1: full training split
};

struct RunConfig {
  GeneratorConfig data;
  LmConfig lm;
  PretrainSettings pretrain;
  int pretrain_num_transcripts = 20000;
  MmgerConfig trainer;
  AblationPreset ablation;

  // Derived wiring (vocab sizes, feature dims) applied after parsing.
  void finalize();
};

RunConfig default_run_config();
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

}  // namespace mmger
