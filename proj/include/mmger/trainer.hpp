// End-to-end joint training with the weighted three-part loss,
// evaluation (dual CER reporting plus AR accuracy), checkpointing, and
// the nine-row ablation matrix.
#pragma once

#include "mmger/correction.hpp"
#include "mmger/ctc.hpp"
#include "mmger/encoders.hpp"
#include "mmger/metrics.hpp"
#include "mmger/synthdata.hpp"

#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>

namespace mmger {

struct MmgerConfig {
  double lambda = 0.3;  // CTC weight
  double mu = 0.3;      // AR weight
  FusionScheme fusion = FusionScheme::kAdd;
  Granularity granularity = Granularity::kBoth;
  MmcMode mmc_mode = MmcMode::kBoth;
  bool stop_gradient_accent = false;
  bool lm_path_enabled = true;  // false: plain CTC recipe (reduction mode)

  EncoderConfig shared_encoder;
  EncoderConfig asr_encoder;
  int adapter_ffn_dim = 128;
  int adapter_heads = 4;
  int fusion_dim = 64;
  int num_accents = 4;

  double lr = 1e-3;
  int warmup_steps = 500;
  int batch_size = 16;
  int epochs = 10;
  uint64_t seed = 1;
  // Extra frame noise applied during training only. Keeps the acoustic
  // model from memorizing the training split, so the hypotheses fed to
  // the correction prompts keep a realistic error rate for the corrector
  // to learn from; evaluation frames are untouched.
  double train_noise_sigma = 0.3;

  void validate() const {
    if (lambda < 0 || mu < 0) throw std::invalid_argument("loss weights must be nonnegative");
    if (shared_encoder.subsample_factor != asr_encoder.subsample_factor) {
      throw std::invalid_argument("shared and ASR encoders must share the subsample factor");
    }
  }
};

inline double total_loss(double l_llm, double l_ctc, double l_ar, const MmgerConfig& cfg) {
  return l_llm + cfg.lambda * l_ctc + cfg.mu * l_ar;
}

template <typename S>
struct MmgerModel {
  MmgerConfig cfg;
  LmConfig lm_cfg;
  ParamStore<S> ps;
  std::optional<CausalLm<S>> lm;
  std::optional<Encoder<S>> shared_enc;
  std::optional<CtcHead<S>> ctc_head;
  std::optional<Encoder<S>> asr_enc;
  std::optional<Adapter<S>> adapter;
  std::optional<ArFusion<S>> arf;
  std::optional<SpecialTokens<S>> st;
  std::optional<MmcProjector<S>> mmc_proj;
  uint64_t frozen_lm_checksum = 0;

  // Deterministic per-module init streams so that enabling or disabling
  // one path never perturbs another path's initialization.
  static std::mt19937_64 module_rng(uint64_t seed, const std::string& name) {
    return std::mt19937_64(hash_combine(seed, name));
  }

  // `load_lm` populates the freshly created lm.* params (e.g. from a
  // pretraining run or checkpoint); pass nullptr to keep the random init.
  static MmgerModel build(const MmgerConfig& cfg, const LmConfig& lm_cfg,
                          const std::function<void(ParamStore<S>&)>& load_lm) {
    cfg.validate();
    MmgerModel m;
    m.cfg = cfg;
    m.lm_cfg = lm_cfg;

    if (cfg.lm_path_enabled) {
      auto rng = module_rng(cfg.seed, "lm");
      m.lm = CausalLm<S>::create(m.ps, "lm", lm_cfg, rng);
      if (load_lm) load_lm(m.ps);
      m.lm->freeze();
      m.frozen_lm_checksum = m.lm->checksum();
    }
    {
      auto rng = module_rng(cfg.seed, "shared");
      m.shared_enc = Encoder<S>::create(m.ps, "shared", cfg.shared_encoder, rng);
    }
    {
      auto rng = module_rng(cfg.seed, "ctc");
      // CTC vocabulary: the symbol set including blank (column 0)
      m.ctc_head = CtcHead<S>::create(m.ps, "ctc", cfg.shared_encoder.model_dim,
                                      lm_cfg.vocab_size - 2, rng);
    }
    if (cfg.lm_path_enabled) {
      {
        auto rng = module_rng(cfg.seed, "asr");
        m.asr_enc = Encoder<S>::create(m.ps, "asr", cfg.asr_encoder, rng);
      }
      {
        auto rng = module_rng(cfg.seed, "adapter");
        m.adapter = Adapter<S>::create(m.ps, "adapter", cfg.asr_encoder.model_dim, lm_cfg.d_model,
                                       cfg.adapter_ffn_dim, cfg.adapter_heads, rng);
      }
      const Mat<S> eos_row = m.lm->embedding_values().row(lm_cfg.eos_id);
      {
        auto rng = module_rng(cfg.seed, "arfusion");
        FusionConfig fc;
        fc.scheme = cfg.fusion;
        fc.fusion_dim = cfg.fusion_dim;
        fc.num_accents = cfg.num_accents;
        fc.lm_dim = lm_cfg.d_model;
        fc.shared_concat_dim =
            int(cfg.shared_encoder.tap_layers.size()) * cfg.shared_encoder.model_dim;
        fc.stop_gradient_accent = cfg.stop_gradient_accent;
        m.arf = ArFusion<S>::create(m.ps, "fus", fc, rng, &eos_row);
      }
      {
        auto rng = module_rng(cfg.seed, "prompt");
        m.st = SpecialTokens<S>::create(m.ps, "prompt", lm_cfg.d_model, rng, &eos_row);
        m.mmc_proj = MmcProjector<S>::create(m.ps, "mmc", lm_cfg.d_model, rng);
      }
    }
    return m;
  }
};

struct StepLosses {
  double l_llm = 0, l_ctc = 0, l_ar = 0, total = 0;
  int used = 0;
  int skipped_infeasible = 0;
};

struct EvalReport {
  double cer_all = 0;             // corrected output, all accents
  double cer_accented = 0;        // corrected output, accent != 0
  std::vector<double> cer_per_accent;
  double baseline_cer_all = 0;    // CTC greedy
  double baseline_cer_accented = 0;
  std::vector<double> baseline_cer_per_accent;
  double ar_accuracy = 0;
  std::vector<double> ar_accuracy_per_accent;
  int count = 0;

  // Table-style "all / accented" line.
  std::string cer_line() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << cer_all << " / " << cer_accented;
    return os.str();
  }
};

struct DecodedUtterance {
  std::string utt_id;
  std::vector<int> baseline;   // regularized CTC greedy
  std::vector<int> corrected;  // LM decode
  std::vector<int> reference;
  int accent = 0;
  int accent_pred = 0;
};

// Number of frames CTC needs for a target: length plus forced blank gaps
// between equal neighbours.
inline int ctc_min_frames(const std::vector<int>& target) {
  int need = int(target.size());
  for (size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++need;
  }
  return need;
}

template <typename S>
class Trainer {
 public:
  Trainer(MmgerModel<S>& model)
      : model_(model), opt_(S(model.cfg.lr), model.cfg.warmup_steps) {}

  // Builds the full per-utterance graph on `tape` and returns the three
  // loss terms (absent optionals where a path is off or infeasible).
  struct UttGraph {
    std::optional<Var<S>> l_ctc;
    std::optional<Var<S>> l_llm;
    std::optional<Var<S>> l_ar;
  };

  UttGraph utterance_graph(Tape<S>& tape, const Utterance& u, bool with_losses = true) {
    const MmgerConfig& cfg = model_.cfg;
    UttGraph g;
    Mat<S> frames = u.frames.template cast<S>();
    EncoderOutput<S> enc = model_.shared_enc->forward(tape, frames);
    Var<S> logits = model_.ctc_head->forward(tape, enc.hidden);
    const int tprime = int(logits.rows());
    if (with_losses && ctc_min_frames(u.transcript) <= tprime) {
      g.l_ctc = ctc_loss(tape, logits, u.transcript);
    }
    if (!with_losses) {
      last_hypothesis_ = decode_hypothesis(logits.val());
      last_tprime_ = tprime;
    }
    if (!cfg.lm_path_enabled) return g;

    Hypothesis hyp = with_losses ? decode_hypothesis(logits.val()) : last_hypothesis_;

    // AR branch
    Var<S> x_hyp = embed_hypothesis(tape, *model_.lm, hyp.regular_tokens);
    Var<S> x_shared = tap_concat(enc);
    ArOutputs<S> ar = model_.arf->forward(tape, x_hyp, x_shared);
    last_accent_logits_ = ar.accent_logits.val();
    if (with_losses) g.l_ar = ar_loss(ar.accent_logits, u.accent);

    // correction branch
    std::optional<Var<S>> mmc, mgc;
    if (cfg.granularity != Granularity::kCoarseOnly) {
      EncoderOutput<S> asr = model_.asr_enc->forward(tape, frames);
      if (asr.hidden.rows() != tprime) throw std::logic_error("encoder length law violated");
      Var<S> x_asr = model_.adapter->forward(tape, asr.hidden);
      Var<S> x_hyp_frames = embed_frame_hypothesis(tape, *model_.lm, *model_.st, hyp.frame_labels);
      mmc = build_mmc(tape, x_asr, x_hyp_frames, cfg.mmc_mode, *model_.mmc_proj);
    }
    if (cfg.granularity != Granularity::kFineOnly) {
      mgc = build_mgc(tape, *model_.lm, hyp.regular_tokens);
    }
    PromptSequence<S> prompt = assemble_prompt(tape, *model_.lm, *model_.st, mmc, mgc, ar.x_accent,
                                               u.transcript, with_losses);
    if (with_losses) {
      g.l_llm = lm_loss(tape, *model_.lm, prompt);
    } else {
      last_prompt_ = prompt.seq.val();
    }
    return g;
  }

  StepLosses train_step(std::span<const Utterance> batch) {
    Tape<S> tape;
    std::vector<Var<S>> ctcs, llms, ars;
    StepLosses out;
    std::mt19937_64 aug_rng(
        hash_combine(model_.cfg.seed, "aug" + std::to_string(step_)));
    for (const Utterance& u : batch) {
      UttGraph g;
      if (model_.cfg.train_noise_sigma > 0.0) {
        Utterance noisy = u;
        for (Eigen::Index i = 0; i < noisy.frames.size(); ++i) {
          noisy.frames.data()[i] += float(model_.cfg.train_noise_sigma * rand_normal(aug_rng));
        }
        g = utterance_graph(tape, noisy);
      } else {
        g = utterance_graph(tape, u);
      }
      if (!g.l_ctc.has_value()) {
        ++out.skipped_infeasible;
        continue;
      }
      ctcs.push_back(*g.l_ctc);
      if (g.l_llm) llms.push_back(*g.l_llm);
      if (g.l_ar) ars.push_back(*g.l_ar);
      ++out.used;
    }
    if (out.used == 0) return out;

    auto mean_of = [&](std::vector<Var<S>>& v) {
      Var<S> s = v[0];
      for (size_t i = 1; i < v.size(); ++i) s = add(s, v[i]);
      return scale(s, S(1) / S(v.size()));
    };
    Var<S> l_ctc = mean_of(ctcs);
    out.l_ctc = double(l_ctc.val()(0, 0));
    Var<S> total = scale(l_ctc, S(model_.cfg.lambda));
    if (!llms.empty()) {
      Var<S> l_llm = mean_of(llms);
      out.l_llm = double(l_llm.val()(0, 0));
      total = add(l_llm, total);
    }
    if (!ars.empty() && model_.cfg.mu != 0.0) {
      Var<S> l_ar = mean_of(ars);
      out.l_ar = double(l_ar.val()(0, 0));
      total = add(total, scale(l_ar, S(model_.cfg.mu)));
    } else if (!ars.empty()) {
      out.l_ar = double(mean_of(ars).val()(0, 0));
    }
    out.total = double(total.val()(0, 0));
    if (!std::isfinite(out.total)) {
      std::ostringstream os;
      os << "NaN/inf loss at step " << step_ << ": llm=" << out.l_llm << " ctc=" << out.l_ctc
         << " ar=" << out.l_ar;
      throw std::runtime_error(os.str());
    }
    model_.ps.zero_grad();
    tape.backward(total.id);
    opt_.step(model_.ps);
    ++step_;
    return out;
  }

  using StepCallback = std::function<void(int epoch, int64_t step, const StepLosses&)>;

  void train(const std::vector<Utterance>& data, StepCallback on_step = nullptr) {
    const MmgerConfig& cfg = model_.cfg;
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (; epoch_ < cfg.epochs; ++epoch_) {
      std::mt19937_64 rng(hash_combine(cfg.seed, "epoch" + std::to_string(epoch_)));
      for (size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[size_t(rng() % i)]);
      }
      for (size_t b = 0; b < order.size(); b += size_t(cfg.batch_size)) {
        const size_t end = std::min(order.size(), b + size_t(cfg.batch_size));
        std::vector<Utterance> batch;
        for (size_t i = b; i < end; ++i) batch.push_back(data[order[i]]);
        StepLosses losses = train_step(batch);
        if (on_step) on_step(epoch_, step_, losses);
      }
    }
  }

  DecodedUtterance decode_utterance(const Utterance& u) {
    DecodedUtterance d;
    d.utt_id = u.utt_id;
    d.reference = u.transcript;
    d.accent = u.accent;
    Tape<S> tape;
    utterance_graph(tape, u, /*with_losses=*/false);
    d.baseline = last_hypothesis_.regular_tokens;
    if (model_.cfg.lm_path_enabled) {
      const int max_len = 2 * last_tprime_ + 5;
      d.corrected = lm_greedy_decode(*model_.lm, last_prompt_, max_len);
      int best = 0;
      for (Eigen::Index k = 1; k < last_accent_logits_.cols(); ++k) {
        if (last_accent_logits_(0, k) > last_accent_logits_(0, best)) best = int(k);
      }
      d.accent_pred = best;
    } else {
      d.corrected = d.baseline;
    }
    return d;
  }

  EvalReport evaluate(const std::vector<Utterance>& utts) {
    const int A = model_.cfg.num_accents;
    std::vector<CerAccumulator> acc(A), base(A);
    CerAccumulator acc_all, base_all, acc_accented, base_accented;
    std::vector<int> ar_hits(A, 0), ar_total(A, 0);
    for (const Utterance& u : utts) {
      DecodedUtterance d = decode_utterance(u);
      acc_all.add(d.corrected, d.reference);
      base_all.add(d.baseline, d.reference);
      acc[size_t(u.accent)].add(d.corrected, d.reference);
      base[size_t(u.accent)].add(d.baseline, d.reference);
      if (u.accent != 0) {
        acc_accented.add(d.corrected, d.reference);
        base_accented.add(d.baseline, d.reference);
      }
      ar_total[size_t(u.accent)]++;
      if (d.accent_pred == u.accent) ar_hits[size_t(u.accent)]++;
    }
    EvalReport r;
    r.count = int(utts.size());
    r.cer_all = acc_all.value();
    r.cer_accented = acc_accented.value();
    r.baseline_cer_all = base_all.value();
    r.baseline_cer_accented = base_accented.value();
    int hits = 0, total = 0;
    for (int a = 0; a < A; ++a) {
      r.cer_per_accent.push_back(acc[size_t(a)].value());
      r.baseline_cer_per_accent.push_back(base[size_t(a)].value());
      r.ar_accuracy_per_accent.push_back(
          ar_total[size_t(a)] ? double(ar_hits[size_t(a)]) / double(ar_total[size_t(a)]) : 0.0);
      hits += ar_hits[size_t(a)];
      total += ar_total[size_t(a)];
    }
    r.ar_accuracy = total ? double(hits) / double(total) : 0.0;
    return r;
  }

  int64_t step() const { return step_; }
  int epoch() const { return epoch_; }
  void set_progress(int epoch, int64_t step) { epoch_ = epoch; step_ = step; }
  AdamOptimizer<S>& optimizer() { return opt_; }

 private:
  MmgerModel<S>& model_;
  AdamOptimizer<S> opt_;
  int64_t step_ = 0;
  int epoch_ = 0;
  Hypothesis last_hypothesis_;
  Mat<S> last_prompt_;
  Mat<S> last_accent_logits_;
  int last_tprime_ = 0;
};

}  // namespace mmger
