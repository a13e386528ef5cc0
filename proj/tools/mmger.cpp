// Single-binary command line front end. All artifacts for one experiment
// live under a run directory (--out):
//   <out>/data/...      generate-data
//   <out>/lm.ckpt       pretrain-lm
//   <out>/model.ckpt    train
//   <out>/ablation.*    ablate
// Exit codes: 0 success, 1 usage error, 2 runtime failure.
#include "CLI11.hpp"
#include "mmger/ablation.hpp"
#include "mmger/checkpoint.hpp"
#include "mmger/config.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace mmger;
using json = nlohmann::json;

namespace {

struct CliArgs {
  std::string config_path;
  std::string out_dir = "run";
  std::string checkpoint;
  std::string split = "dev";
  std::string row;
  uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig resolve_config(const CliArgs& a) {
  RunConfig cfg = a.config_path.empty() ? default_run_config() : load_run_config(a.config_path);
  return cfg;
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir + "/config.json");
  out << run_config_to_json(cfg).dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write config echo under " + out_dir);
}

std::string lm_ckpt_path(const CliArgs& a) { return a.out_dir + "/lm.ckpt"; }
std::string model_ckpt_path(const CliArgs& a) {
  return a.checkpoint.empty() ? a.out_dir + "/model.ckpt" : a.checkpoint;
}

std::vector<Utterance> load_split(const CliArgs& a, const std::string& split) {
  return load_utterances(load_manifest(a.out_dir + "/data/" + split + ".manifest.json"));
}

// Text-only corpus for LM pretraining, drawn from the same grammar that
// generates the audio transcripts.
std::vector<std::vector<int>> pretrain_corpus(const RunConfig& cfg) {
  BigramGrammar grammar(hash_combine(cfg.data.seed, "grammar"), cfg.data.vocab_size);
  std::mt19937_64 rng(hash_combine(cfg.pretrain.seed, "pretrain-text"));
  return build_pretrain_text(grammar, rng, cfg.pretrain_num_transcripts,
                             {cfg.data.len_min, cfg.data.len_max}, cfg.lm.eos_id, 10, 80,
                             cfg.pretrain.repeat_prob, cfg.pretrain.denoise_prob,
                             cfg.pretrain.denoise_sub_rate, cfg.pretrain.denoise_indel_rate,
                             cfg.pretrain.denoise_merge_prob);
}

std::function<void(ParamStore<float>&)> lm_loader(const CliArgs& a, const RunConfig& cfg) {
  if (!cfg.trainer.lm_path_enabled) return nullptr;
  const std::string path = lm_ckpt_path(a);
  return [path](ParamStore<float>& ps) { load_lm_checkpoint<float>(path, ps); };
}

json report_to_json(const EvalReport& r) {
  json j;
  j["count"] = r.count;
  j["cer_all"] = r.cer_all;
  j["cer_accented"] = r.cer_accented;
  j["cer_per_accent"] = r.cer_per_accent;
  j["baseline_cer_all"] = r.baseline_cer_all;
  j["baseline_cer_accented"] = r.baseline_cer_accented;
  j["baseline_cer_per_accent"] = r.baseline_cer_per_accent;
  j["ar_accuracy"] = r.ar_accuracy;
  j["ar_accuracy_per_accent"] = r.ar_accuracy_per_accent;
  return j;
}

std::string join_tokens(const std::vector<int>& toks) {
  std::string s;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(toks[i]);
  }
  return s;
}

int cmd_generate_data(CliArgs& a) {
  RunConfig cfg = resolve_config(a);
  if (a.seed_set) cfg.data.seed = a.seed;
  echo_config(cfg, a.out_dir);
  auto manifests = generate_corpus(cfg.data, a.out_dir + "/data");
  for (const auto& m : manifests) {
    std::cout << m.split << ": " << m.count << " utterances, frames checksum "
              << std::hex << file_checksum(m.frames_path) << std::dec << '\n';
  }
  return 0;
}

int cmd_pretrain_lm(CliArgs& a) {
  RunConfig cfg = resolve_config(a);
  if (a.seed_set) cfg.pretrain.seed = a.seed;
  echo_config(cfg, a.out_dir);
  ParamStore<float> ps;
  std::mt19937_64 rng(hash_combine(cfg.pretrain.seed, "lm-init"));
  CausalLm<float> lm = CausalLm<float>::create(ps, "lm", cfg.lm, rng);
  auto corpus = pretrain_corpus(cfg);
  PretrainResult res = pretrain_lm(lm, ps, corpus, cfg.pretrain);
  save_lm_checkpoint(lm_ckpt_path(a), ps, cfg.lm, res);
  std::cout << "pretrained on " << corpus.size() << " transcripts; held-out ppl "
            << res.heldout_ppl << " (uniform would be " << cfg.lm.vocab_size
            << "); checksum " << std::hex << res.checksum << std::dec << '\n';
  return 0;
}

int cmd_train(CliArgs& a) {
  RunConfig cfg = resolve_config(a);
  if (a.seed_set) cfg.trainer.seed = a.seed;
  echo_config(cfg, a.out_dir);
  std::vector<Utterance> train_data = load_split(a, "train");

  MmgerModel<float> model = MmgerModel<float>::build(cfg.trainer, cfg.lm, lm_loader(a, cfg));
  Trainer<float> trainer(model);
  if (!a.checkpoint.empty()) {
    CheckpointMeta meta = load_checkpoint(a.checkpoint, model.ps);
    trainer.set_progress(meta.epoch, meta.step);
    trainer.optimizer().set_steps_taken(meta.step);
    std::cout << "resumed from " << a.checkpoint << " at epoch " << meta.epoch << ", step "
              << meta.step << '\n';
  }

  std::ofstream log(a.out_dir + "/train_log.jsonl", a.checkpoint.empty() ? std::ios::trunc
                                                                         : std::ios::app);
  log.precision(17);
  trainer.train(train_data, [&](int epoch, int64_t step, const StepLosses& l) {
    log << "{\"epoch\":" << epoch << ",\"step\":" << step << ",\"l_llm\":" << l.l_llm
        << ",\"l_ctc\":" << l.l_ctc << ",\"l_ar\":" << l.l_ar << ",\"total\":" << l.total
        << ",\"used\":" << l.used << "}\n";
    if (step % 20 == 0) {
      std::cout << "epoch " << epoch << " step " << step << " total " << l.total << " (llm "
                << l.l_llm << " ctc " << l.l_ctc << " ar " << l.l_ar << ")\n";
    }
  });

  CheckpointMeta meta;
  meta.config_json = run_config_to_json(cfg).dump();
  meta.frozen_lm_checksum = model.frozen_lm_checksum;
  meta.step = trainer.step();
  meta.epoch = trainer.epoch();
  meta.data_seed = cfg.data.seed;
  save_checkpoint(a.out_dir + "/model.ckpt", model.ps, meta);
  std::cout << "trained " << trainer.step() << " steps; checkpoint " << a.out_dir
            << "/model.ckpt\n";
  if (model.lm && model.lm->checksum() != model.frozen_lm_checksum) {
    throw std::runtime_error("frozen LM drifted during training");
  }
  return 0;
}

// Shared by evaluate/decode: rebuild the model and load the checkpoint.
std::pair<MmgerModel<float>, CheckpointMeta> restore_model(const CliArgs& a,
                                                           const RunConfig& cfg) {
  MmgerModel<float> model = MmgerModel<float>::build(cfg.trainer, cfg.lm, lm_loader(a, cfg));
  CheckpointMeta meta = load_checkpoint(model_ckpt_path(a), model.ps);
  if (model.lm && model.lm->checksum() != meta.frozen_lm_checksum) {
    throw std::runtime_error("checkpoint frozen-LM checksum mismatch");
  }
  return {std::move(model), meta};
}

int cmd_evaluate(CliArgs& a) {
  RunConfig cfg = resolve_config(a);
  auto [model, meta] = restore_model(a, cfg);
  Trainer<float> trainer(model);
  EvalReport r = trainer.evaluate(load_split(a, a.split));
  json j = report_to_json(r);
  std::ofstream out(a.out_dir + "/eval_" + a.split + ".json");
  out << j.dump(2) << '\n';
  std::cout << j.dump(2) << '\n';
  std::cout << "CER (all / accented): " << r.cer_line() << "; baseline "
            << std::fixed << std::setprecision(4) << r.baseline_cer_all << " / "
            << r.baseline_cer_accented << "; AR acc " << r.ar_accuracy << '\n';
  return 0;
}

int cmd_decode(CliArgs& a) {
  RunConfig cfg = resolve_config(a);
  auto [model, meta] = restore_model(a, cfg);
  Trainer<float> trainer(model);
  std::cout << "utt_id\tbaseline\tcorrected\treference\n";
  for (const Utterance& u : load_split(a, a.split)) {
    DecodedUtterance d = trainer.decode_utterance(u);
    std::cout << d.utt_id << '\t' << join_tokens(d.baseline) << '\t' << join_tokens(d.corrected)
              << '\t' << join_tokens(d.reference) << '\n';
  }
  return 0;
}

int cmd_ablate(CliArgs& a) {
  RunConfig cfg = resolve_config(a);
  if (a.seed_set) cfg.trainer.seed = a.seed;
  echo_config(cfg, a.out_dir);
  MmgerConfig base = cfg.trainer;
  if (cfg.ablation.epochs > 0) base.epochs = cfg.ablation.epochs;
  std::vector<Utterance> train_data = load_split(a, "train");
  if (cfg.ablation.train_utts > 0 && size_t(cfg.ablation.train_utts) < train_data.size()) {
    train_data.resize(size_t(cfg.ablation.train_utts));
  }
  std::vector<Utterance> dev_data = load_split(a, a.split);

  std::vector<std::string> only;
  if (!a.row.empty()) {
    std::istringstream rs(a.row);
    std::string tok;
    while (std::getline(rs, tok, ',')) only.push_back(tok);
  }

  auto results = run_ablation_matrix<float>(
      base, cfg.lm, lm_loader(a, cfg), train_data, dev_data,
      [](const AblationRowResult& r) {
        if (r.ok) {
          std::cout << r.id << ": CER " << r.report.cer_line() << ", AR acc "
                    << r.report.ar_accuracy << '\n';
        } else {
          std::cout << r.id << ": FAILED: " << r.error << '\n';
        }
      },
      only);

  std::ofstream jf(a.out_dir + "/ablation.json");
  jf << ablation_to_json(results).dump(2) << '\n';
  const std::string table = ablation_to_table(results);
  std::ofstream tf(a.out_dir + "/ablation.txt");
  tf << table;
  std::cout << table;
  for (const auto& r : results) {
    if (!r.ok) return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"accent-aware ASR error correction workbench"};
  app.require_subcommand(1);
  CliArgs a;
  app.add_option("--config", a.config_path, "JSON run configuration");
  app.add_option("--out", a.out_dir, "run directory for all artifacts");
  app.add_option("--seed", a.seed, "override the stage-relevant seed")
      ->each([&a](const std::string&) { a.seed_set = true; });
  app.add_option("--checkpoint", a.checkpoint, "model checkpoint (resume/eval/decode)");
  app.add_option("--split", a.split, "dataset split (dev/test/train)");
  app.add_option("--row", a.row, "comma-separated ablation row ids (default: all)");

  auto* g = app.add_subcommand("generate-data", "write the synthetic corpus");
  auto* p = app.add_subcommand("pretrain-lm", "pretrain and freeze the LM");
  auto* t = app.add_subcommand("train", "joint training run");
  auto* e = app.add_subcommand("evaluate", "CER / AR report on a split");
  auto* d = app.add_subcommand("decode", "per-utterance baseline vs corrected output");
  auto* b = app.add_subcommand("ablate", "run the ablation matrix");
  for (auto* sub : {g, p, t, e, d, b}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 1;
  }

  try {
    if (g->parsed()) return cmd_generate_data(a);
    if (p->parsed()) return cmd_pretrain_lm(a);
    if (t->parsed()) return cmd_train(a);
    if (e->parsed()) return cmd_evaluate(a);
    if (d->parsed()) return cmd_decode(a);
    if (b->parsed()) return cmd_ablate(a);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  }
  return 1;
}
