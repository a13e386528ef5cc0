#include "doctest.h"

#include "mmger/config.hpp"

using namespace mmger;
using json = nlohmann::json;

TEST_CASE("defaults wire the derived dimensions") {
  RunConfig cfg = default_run_config();
  CHECK(cfg.data.vocab_size == 24);
  CHECK(cfg.lm.vocab_size == 26);
  CHECK(cfg.lm.eos_id == 24);
  CHECK(cfg.lm.pad_id == 25);
  CHECK(cfg.trainer.shared_encoder.input_dim == cfg.data.feat_dim);
  CHECK(cfg.trainer.asr_encoder.input_dim == cfg.data.feat_dim);
  CHECK(cfg.trainer.num_accents == cfg.data.num_accents);
  CHECK(cfg.trainer.lambda == doctest::Approx(0.3));
  CHECK(cfg.trainer.mu == doctest::Approx(0.3));
  CHECK(cfg.trainer.fusion == FusionScheme::kAdd);
}

TEST_CASE("unknown keys are rejected with section context") {
  CHECK_THROWS_WITH_AS(parse_run_config(json{{"bogus", 1}}),
                       doctest::Contains("unknown config key 'bogus'"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_run_config(json{{"data", {{"vocab_size", 24}, {"oops", 2}}}}),
                       doctest::Contains("'oops'"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_run_config(json{{"encoders", {{"shared", {{"typo_layers", 4}}}}}}),
      doctest::Contains("encoders.shared"), std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config(json{{"trainer", {{"momentum", 0.9}}}}),
                  std::invalid_argument);
}

TEST_CASE("round trip: serialize then parse preserves every field") {
  json j = {
      {"data", {{"vocab_size", 12}, {"feat_dim", 6}, {"train_utts", 50}, {"seed", 9}}},
      {"lm",
       {{"d_model", 16},
        {"num_layers", 2},
        {"pretrain", {{"epochs", 2}, {"num_transcripts", 500}}}}},
      {"encoders", {{"shared", {{"num_layers", 2}, {"model_dim", 16}, {"num_heads", 2}}},
                    {"asr", {{"num_layers", 2}, {"model_dim", 16}, {"num_heads", 2}}}}},
      {"arfusion", {{"scheme", "attention"}, {"fusion_dim", 16}}},
      {"correction", {{"granularity", "fine_only"}, {"mmc_mode", "acoustic_only"}}},
      {"trainer",
       {{"lambda", 1.0},
        {"mu", 0.0},
        {"epochs", 3},
        {"lm_path_enabled", false},
        {"train_noise_sigma", 0.15}}},
      {"ablation", {{"epochs", 2}, {"train_utts", 40}}},
  };
  RunConfig cfg = parse_run_config(j);
  CHECK(cfg.data.vocab_size == 12);
  CHECK(cfg.lm.vocab_size == 14);
  CHECK(cfg.lm.d_model == 16);
  CHECK(cfg.pretrain.epochs == 2);
  CHECK(cfg.pretrain_num_transcripts == 500);
  CHECK(cfg.trainer.fusion == FusionScheme::kAttention);
  CHECK(cfg.trainer.granularity == Granularity::kFineOnly);
  CHECK(cfg.trainer.mmc_mode == MmcMode::kAcousticOnly);
  CHECK(cfg.trainer.lambda == doctest::Approx(1.0));
  CHECK(cfg.trainer.lm_path_enabled == false);
  CHECK(cfg.trainer.train_noise_sigma == doctest::Approx(0.15));
  CHECK(cfg.ablation.epochs == 2);
  CHECK(cfg.ablation.train_utts == 40);

  RunConfig again = parse_run_config(run_config_to_json(cfg));
  CHECK(run_config_to_json(again) == run_config_to_json(cfg));
}

TEST_CASE("invalid enum values and mismatched subsampling are rejected") {
  CHECK_THROWS_AS(parse_run_config(json{{"arfusion", {{"scheme", "mystery"}}}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(parse_run_config(json{{"correction", {{"granularity", "?"}}}}),
                  std::invalid_argument);
  json j = {{"encoders", {{"shared", {{"subsample_factor", 2}}}}}};
  CHECK_THROWS_AS(parse_run_config(j), std::invalid_argument);  // asr stays at 1
}
