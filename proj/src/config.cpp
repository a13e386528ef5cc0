#include "mmger/config.hpp"

#include <fstream>
#include <set>

using json = nlohmann::json;

namespace mmger {

namespace {

void check_keys(const json& obj, const std::string& section, const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::invalid_argument("unknown config key '" + it.key() + "' in section '" + section +
                                  "'");
    }
  }
}

template <typename T>
void get(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void parse_encoder(const json& j, const std::string& section, EncoderConfig& e) {
  check_keys(j, section,
             {"num_layers", "model_dim", "ffn_dim", "num_heads", "subsample_factor", "tap_layers",
              "use_conv_block"});
  get(j, "num_layers", e.num_layers);
  get(j, "model_dim", e.model_dim);
  get(j, "ffn_dim", e.ffn_dim);
  get(j, "num_heads", e.num_heads);
  get(j, "subsample_factor", e.subsample_factor);
  get(j, "tap_layers", e.tap_layers);
  get(j, "use_conv_block", e.use_conv_block);
}

json encoder_to_json(const EncoderConfig& e) {
  return {{"num_layers", e.num_layers},
          {"model_dim", e.model_dim},
          {"ffn_dim", e.ffn_dim},
          {"num_heads", e.num_heads},
          {"subsample_factor", e.subsample_factor},
          {"tap_layers", e.tap_layers},
          {"use_conv_block", e.use_conv_block}};
}

}  // namespace

void RunConfig::finalize() {
  lm.vocab_size = data.vocab_size + 2;
  lm.eos_id = data.vocab_size;
  lm.pad_id = data.vocab_size + 1;
  trainer.shared_encoder.input_dim = data.feat_dim;
  trainer.asr_encoder.input_dim = data.feat_dim;
  trainer.num_accents = data.num_accents;
  trainer.validate();
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.finalize();
  return cfg;
}

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  check_keys(j, "<root>",
             {"data", "lm", "encoders", "arfusion", "correction", "trainer", "ablation"});

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, "data",
               {"vocab_size", "feat_dim", "num_accents", "shift_strengths",
                "confusions_per_accent", "noise_sigma", "dur_min", "dur_max", "len_min", "len_max",
                "train_utts", "dev_utts", "test_utts", "seed"});
    get(d, "vocab_size", cfg.data.vocab_size);
    get(d, "feat_dim", cfg.data.feat_dim);
    get(d, "num_accents", cfg.data.num_accents);
    get(d, "shift_strengths", cfg.data.shift_strengths);
    get(d, "confusions_per_accent", cfg.data.confusions_per_accent);
    get(d, "noise_sigma", cfg.data.noise_sigma);
    get(d, "dur_min", cfg.data.dur_min);
    get(d, "dur_max", cfg.data.dur_max);
    get(d, "len_min", cfg.data.len_min);
    get(d, "len_max", cfg.data.len_max);
    get(d, "train_utts", cfg.data.train_utts);
    get(d, "dev_utts", cfg.data.dev_utts);
    get(d, "test_utts", cfg.data.test_utts);
    get(d, "seed", cfg.data.seed);
  }

  if (j.contains("lm")) {
    const json& l = j.at("lm");
    check_keys(l, "lm",
               {"d_model", "num_layers", "num_heads", "ffn_dim", "context_cap", "pretrain"});
    get(l, "d_model", cfg.lm.d_model);
    get(l, "num_layers", cfg.lm.num_layers);
    get(l, "num_heads", cfg.lm.num_heads);
    get(l, "ffn_dim", cfg.lm.ffn_dim);
    get(l, "context_cap", cfg.lm.context_cap);
    if (l.contains("pretrain")) {
      const json& p = l.at("pretrain");
      check_keys(p, "lm.pretrain",
                 {"epochs", "batch_size", "lr", "warmup_steps", "heldout_fraction", "seed",
                  "num_transcripts", "repeat_prob", "denoise_prob", "denoise_sub_rate",
                  "denoise_indel_rate", "denoise_merge_prob"});
      get(p, "epochs", cfg.pretrain.epochs);
      get(p, "batch_size", cfg.pretrain.batch_size);
      get(p, "lr", cfg.pretrain.lr);
      get(p, "warmup_steps", cfg.pretrain.warmup_steps);
      get(p, "heldout_fraction", cfg.pretrain.heldout_fraction);
      get(p, "seed", cfg.pretrain.seed);
      get(p, "repeat_prob", cfg.pretrain.repeat_prob);
      get(p, "denoise_prob", cfg.pretrain.denoise_prob);
      get(p, "denoise_sub_rate", cfg.pretrain.denoise_sub_rate);
      get(p, "denoise_indel_rate", cfg.pretrain.denoise_indel_rate);
      get(p, "denoise_merge_prob", cfg.pretrain.denoise_merge_prob);
      get(p, "num_transcripts", cfg.pretrain_num_transcripts);
    }
  }

  if (j.contains("encoders")) {
    const json& e = j.at("encoders");
    check_keys(e, "encoders", {"shared", "asr", "adapter_ffn_dim", "adapter_heads"});
    if (e.contains("shared")) parse_encoder(e.at("shared"), "encoders.shared", cfg.trainer.shared_encoder);
    if (e.contains("asr")) parse_encoder(e.at("asr"), "encoders.asr", cfg.trainer.asr_encoder);
    get(e, "adapter_ffn_dim", cfg.trainer.adapter_ffn_dim);
    get(e, "adapter_heads", cfg.trainer.adapter_heads);
  }

  if (j.contains("arfusion")) {
    const json& a = j.at("arfusion");
    check_keys(a, "arfusion", {"scheme", "fusion_dim", "stop_gradient_accent"});
    if (a.contains("scheme")) cfg.trainer.fusion = fusion_scheme_from_string(a.at("scheme"));
    get(a, "fusion_dim", cfg.trainer.fusion_dim);
    get(a, "stop_gradient_accent", cfg.trainer.stop_gradient_accent);
  }

  if (j.contains("correction")) {
    const json& c = j.at("correction");
    check_keys(c, "correction", {"granularity", "mmc_mode"});
    if (c.contains("granularity")) cfg.trainer.granularity = granularity_from_string(c.at("granularity"));
    if (c.contains("mmc_mode")) cfg.trainer.mmc_mode = mmc_mode_from_string(c.at("mmc_mode"));
  }

  if (j.contains("trainer")) {
    const json& t = j.at("trainer");
    check_keys(t, "trainer",
               {"lambda", "mu", "lr", "warmup_steps", "batch_size", "epochs", "seed",
                "lm_path_enabled", "train_noise_sigma"});
    get(t, "lambda", cfg.trainer.lambda);
    get(t, "mu", cfg.trainer.mu);
    get(t, "lr", cfg.trainer.lr);
    get(t, "warmup_steps", cfg.trainer.warmup_steps);
    get(t, "batch_size", cfg.trainer.batch_size);
    get(t, "epochs", cfg.trainer.epochs);
    get(t, "seed", cfg.trainer.seed);
    get(t, "lm_path_enabled", cfg.trainer.lm_path_enabled);
    get(t, "train_noise_sigma", cfg.trainer.train_noise_sigma);
  }

  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    check_keys(a, "ablation", {"epochs", "train_utts"});
    get(a, "epochs", cfg.ablation.epochs);
    get(a, "train_utts", cfg.ablation.train_utts);
  }

  cfg.finalize();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json j;
  in >> j;
  return parse_run_config(j);
}

json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["data"] = {{"vocab_size", cfg.data.vocab_size},
               {"feat_dim", cfg.data.feat_dim},
               {"num_accents", cfg.data.num_accents},
               {"shift_strengths", cfg.data.shift_strengths},
               {"confusions_per_accent", cfg.data.confusions_per_accent},
               {"noise_sigma", cfg.data.noise_sigma},
               {"dur_min", cfg.data.dur_min},
               {"dur_max", cfg.data.dur_max},
               {"len_min", cfg.data.len_min},
               {"len_max", cfg.data.len_max},
               {"train_utts", cfg.data.train_utts},
               {"dev_utts", cfg.data.dev_utts},
               {"test_utts", cfg.data.test_utts},
               {"seed", cfg.data.seed}};
  j["lm"] = {{"d_model", cfg.lm.d_model},
             {"num_layers", cfg.lm.num_layers},
             {"num_heads", cfg.lm.num_heads},
             {"ffn_dim", cfg.lm.ffn_dim},
             {"context_cap", cfg.lm.context_cap},
             {"pretrain",
              {{"epochs", cfg.pretrain.epochs},
               {"batch_size", cfg.pretrain.batch_size},
               {"lr", cfg.pretrain.lr},
               {"warmup_steps", cfg.pretrain.warmup_steps},
               {"heldout_fraction", cfg.pretrain.heldout_fraction},
               {"seed", cfg.pretrain.seed},
               {"num_transcripts", cfg.pretrain_num_transcripts},
               {"repeat_prob", cfg.pretrain.repeat_prob},
               {"denoise_prob", cfg.pretrain.denoise_prob},
               {"denoise_sub_rate", cfg.pretrain.denoise_sub_rate},
               {"denoise_indel_rate", cfg.pretrain.denoise_indel_rate},
               {"denoise_merge_prob", cfg.pretrain.denoise_merge_prob}}}};
  j["encoders"] = {{"shared", encoder_to_json(cfg.trainer.shared_encoder)},
                   {"asr", encoder_to_json(cfg.trainer.asr_encoder)},
                   {"adapter_ffn_dim", cfg.trainer.adapter_ffn_dim},
                   {"adapter_heads", cfg.trainer.adapter_heads}};
  j["arfusion"] = {{"scheme", to_string(cfg.trainer.fusion)},
                   {"fusion_dim", cfg.trainer.fusion_dim},
                   {"stop_gradient_accent", cfg.trainer.stop_gradient_accent}};
  const char* gran = cfg.trainer.granularity == Granularity::kBoth
                         ? "both"
                         : (cfg.trainer.granularity == Granularity::kCoarseOnly ? "coarse_only"
                                                                                : "fine_only");
  const char* mmc = cfg.trainer.mmc_mode == MmcMode::kBoth
                        ? "both"
                        : (cfg.trainer.mmc_mode == MmcMode::kAcousticOnly ? "acoustic_only"
                                                                          : "linguistic_only");
  j["correction"] = {{"granularity", gran}, {"mmc_mode", mmc}};
  j["trainer"] = {{"lambda", cfg.trainer.lambda},
                  {"mu", cfg.trainer.mu},
                  {"lr", cfg.trainer.lr},
                  {"warmup_steps", cfg.trainer.warmup_steps},
                  {"batch_size", cfg.trainer.batch_size},
                  {"epochs", cfg.trainer.epochs},
                  {"seed", cfg.trainer.seed},
                  {"lm_path_enabled", cfg.trainer.lm_path_enabled},
                  {"train_noise_sigma", cfg.trainer.train_noise_sigma}};
  j["ablation"] = {{"epochs", cfg.ablation.epochs}, {"train_utts", cfg.ablation.train_utts}};
  return j;
}

}  // namespace mmger
