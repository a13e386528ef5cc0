// The nine-row ablation matrix (A1-A5 fusion schemes, G1/G2 granularity,
// M1/M2 modality), trained against a shared frozen LM and seed.
#pragma once

#include "mmger/trainer.hpp"

#include <nlohmann/json.hpp>

namespace mmger {

struct AblationRowSpec {
  std::string id;
  MmcMode mmc_mode;
  Granularity granularity;
  FusionScheme fusion;
};

inline std::vector<AblationRowSpec> ablation_rows() {
  using F = FusionScheme;
  using G = Granularity;
  using M = MmcMode;
  return {
      {"A1", M::kBoth, G::kBoth, F::kAcousticOnly},
      {"A2", M::kBoth, G::kBoth, F::kLinguisticOnly},
      {"A3", M::kBoth, G::kBoth, F::kAdd},
      {"A4", M::kBoth, G::kBoth, F::kConcat},
      {"A5", M::kBoth, G::kBoth, F::kAttention},
      {"G1", M::kBoth, G::kCoarseOnly, F::kAdd},  // multi-modal segment absent
      {"G2", M::kBoth, G::kFineOnly, F::kAdd},
      {"M1", M::kAcousticOnly, G::kBoth, F::kAdd},
      {"M2", M::kLinguisticOnly, G::kBoth, F::kAdd},
  };
}

inline MmgerConfig apply_row(MmgerConfig cfg, const AblationRowSpec& row) {
  cfg.mmc_mode = row.mmc_mode;
  cfg.granularity = row.granularity;
  cfg.fusion = row.fusion;
  return cfg;
}

struct AblationRowResult {
  std::string id;
  AblationRowSpec spec;
  bool ok = false;
  std::string error;
  EvalReport report;
};

template <typename S>
std::vector<AblationRowResult> run_ablation_matrix(
    const MmgerConfig& base_cfg, const LmConfig& lm_cfg,
    const std::function<void(ParamStore<S>&)>& load_lm, const std::vector<Utterance>& train_data,
    const std::vector<Utterance>& eval_data,
    const std::function<void(const AblationRowResult&)>& on_row = nullptr,
    const std::vector<std::string>& only = {}) {
  std::vector<AblationRowResult> results;
  for (const AblationRowSpec& row : ablation_rows()) {
    if (!only.empty() && std::find(only.begin(), only.end(), row.id) == only.end()) continue;
    AblationRowResult res;
    res.id = row.id;
    res.spec = row;
    try {
      MmgerConfig cfg = apply_row(base_cfg, row);
      MmgerModel<S> model = MmgerModel<S>::build(cfg, lm_cfg, load_lm);
      Trainer<S> trainer(model);
      trainer.train(train_data);
      res.report = trainer.evaluate(eval_data);
      res.ok = true;
    } catch (const std::exception& e) {
      res.error = e.what();
    }
    if (on_row) on_row(res);
    results.push_back(std::move(res));
  }
  return results;
}

inline nlohmann::json ablation_to_json(const std::vector<AblationRowResult>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (size_t i = 0; i < rows.size(); ++i) {
    const AblationRowSpec& spec = rows[i].spec;
    nlohmann::json r;
    r["id"] = rows[i].id;
    r["mmc_mode"] = spec.mmc_mode == MmcMode::kBoth
                        ? "both"
                        : (spec.mmc_mode == MmcMode::kAcousticOnly ? "acoustic_only"
                                                                   : "linguistic_only");
    r["granularity"] = spec.granularity == Granularity::kBoth
                           ? "both"
                           : (spec.granularity == Granularity::kCoarseOnly ? "coarse_only"
                                                                           : "fine_only");
    r["fusion"] = to_string(spec.fusion);
    r["ok"] = rows[i].ok;
    if (rows[i].ok) {
      const EvalReport& e = rows[i].report;
      r["ar_acc"] = e.ar_accuracy;
      r["cer_all"] = e.cer_all;
      r["cer_accented"] = e.cer_accented;
      r["baseline_cer_all"] = e.baseline_cer_all;
      r["baseline_cer_accented"] = e.baseline_cer_accented;
    } else {
      r["error"] = rows[i].error;
    }
    j.push_back(r);
  }
  return j;
}

// Human-readable table in the "all / accented" reporting format.
inline std::string ablation_to_table(const std::vector<AblationRowResult>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(4) << "ID" << std::setw(18) << "MMC" << std::setw(14) << "Gran"
     << std::setw(18) << "AR Fusion" << std::setw(10) << "AR ACC" << std::setw(20)
     << "CER all/accented" << "baseline all/accented\n";
  for (size_t i = 0; i < rows.size(); ++i) {
    os << std::left << std::setw(4) << rows[i].id;
    auto mmc = rows[i].spec.mmc_mode;
    os << std::setw(18)
       << (mmc == MmcMode::kBoth ? "yes" : (mmc == MmcMode::kAcousticOnly ? "acoustic-only" : "linguistic-only"));
    auto g = rows[i].spec.granularity;
    os << std::setw(14)
       << (g == Granularity::kBoth ? "yes" : (g == Granularity::kCoarseOnly ? "coarse-only" : "fine-only"));
    os << std::setw(18) << to_string(rows[i].spec.fusion);
    if (!rows[i].ok) {
      os << "FAILED: " << rows[i].error << '\n';
      continue;
    }
    const EvalReport& e = rows[i].report;
    os << std::fixed << std::setprecision(4);
    os << std::setw(10) << e.ar_accuracy;
    std::ostringstream c1, c2;
    c1 << std::fixed << std::setprecision(4) << e.cer_all << " / " << e.cer_accented;
    c2 << std::fixed << std::setprecision(4) << e.baseline_cer_all << " / "
       << e.baseline_cer_accented;
    os << std::setw(20) << c1.str() << c2.str() << '\n';
  }
  return os.str();
}

}  // namespace mmger
