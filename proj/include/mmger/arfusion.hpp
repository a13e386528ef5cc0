// Accent-recognition branch: project the acoustic (tap-concat) and
// linguistic (hypothesis-embedding) streams to a common width, fuse them
// with one of five schemes, classify the accent, and expose the
// intermediate accent embedding for the LM prompt.
#pragma once

#include "mmger/ctc.hpp"
#include "mmger/lm.hpp"
#include "mmger/nn.hpp"

#include <string>

namespace mmger {

enum class FusionScheme { kAcousticOnly, kLinguisticOnly, kAdd, kConcat, kAttention };

inline FusionScheme fusion_scheme_from_string(const std::string& s) {
  if (s == "acoustic_only") return FusionScheme::kAcousticOnly;
  if (s == "linguistic_only") return FusionScheme::kLinguisticOnly;
  if (s == "add") return FusionScheme::kAdd;
  if (s == "concat") return FusionScheme::kConcat;
  if (s == "attention") return FusionScheme::kAttention;
  throw std::invalid_argument("unknown fusion scheme: " + s);
}

inline std::string to_string(FusionScheme s) {
  switch (s) {
    case FusionScheme::kAcousticOnly: return "acoustic_only";
    case FusionScheme::kLinguisticOnly: return "linguistic_only";
    case FusionScheme::kAdd: return "add";
    case FusionScheme::kConcat: return "concat";
    case FusionScheme::kAttention: return "attention";
  }
  return "?";
}

struct FusionConfig {
  FusionScheme scheme = FusionScheme::kAdd;
  int fusion_dim = 64;  // D_f, also the GRU hidden size
  int num_accents = 4;
  int lm_dim = 64;
  int shared_concat_dim = 256;  // |taps| * D_enc
  bool stop_gradient_accent = false;
};

// Row u is the frozen-table embedding of token u; empty input gives a
// 0 x D_lm matrix.
template <typename S>
Var<S> embed_hypothesis(Tape<S>& t, const CausalLm<S>& lm, const std::vector<int>& regular_tokens) {
  for (int tok : regular_tokens) {
    if (tok == kBlankId) throw std::invalid_argument("embed_hypothesis: blank in regular tokens");
  }
  return gather_rows(lm.embed_leaf(t), regular_tokens);
}

template <typename S>
struct ArOutputs {
  Var<S> accent_logits;  // 1 x A
  Var<S> x_accent;       // 1 x D_lm
};

template <typename S>
class ArFusion {
 public:
  // `acc_bias_init` (typically the frozen LM's eos embedding) biases the
  // accent projection so X_Accent starts as "separator plus a small
  // utterance-dependent shift": the position right before generation then
  // reads as a segment boundary to the LM from the first step.
  static ArFusion create(ParamStore<S>& ps, const std::string& prefix, const FusionConfig& cfg,
                         std::mt19937_64& rng, const Mat<S>* acc_bias_init = nullptr) {
    if (cfg.fusion_dim <= 0) throw std::invalid_argument("arfusion: fusion_dim <= 0");
    ArFusion a;
    a.cfg_ = cfg;
    const int Df = cfg.fusion_dim;
    a.proj_hyp_ = LinearLayer<S>::create(ps, prefix + ".proj_hyp", cfg.lm_dim, Df, rng);
    a.proj_shared_ =
        LinearLayer<S>::create(ps, prefix + ".proj_shared", cfg.shared_concat_dim, Df, rng);
    switch (cfg.scheme) {
      case FusionScheme::kAdd:
        a.gru_hyp_ = GruLayer<S>::create(ps, prefix + ".gru_hyp", Df, Df, rng);
        a.gru_shared_ = GruLayer<S>::create(ps, prefix + ".gru_shared", Df, Df, rng);
        break;
      case FusionScheme::kConcat:
        a.gru_cat_ = GruLayer<S>::create(ps, prefix + ".gru_cat", Df, Df, rng);
        break;
      case FusionScheme::kAcousticOnly:
        a.gru_shared_ = GruLayer<S>::create(ps, prefix + ".gru_shared", Df, Df, rng);
        break;
      case FusionScheme::kLinguisticOnly:
        a.gru_hyp_ = GruLayer<S>::create(ps, prefix + ".gru_hyp", Df, Df, rng);
        break;
      case FusionScheme::kAttention:
        // attention itself is parameter-free; keep the acoustic GRU as the
        // empty-hypothesis fallback
        a.gru_shared_ = GruLayer<S>::create(ps, prefix + ".gru_shared", Df, Df, rng);
        break;
    }
    a.cls1_ = LinearLayer<S>::create(ps, prefix + ".cls1", Df, Df, rng);
    a.cls2_ = LinearLayer<S>::create(ps, prefix + ".cls2", Df, Df, rng);
    a.cls3_ = LinearLayer<S>::create(ps, prefix + ".cls3", Df, cfg.num_accents, rng);
    a.acc_proj_ = LinearLayer<S>::create(ps, prefix + ".acc_proj", Df, cfg.lm_dim, rng);
    if (acc_bias_init) {
      a.acc_proj_.w->value *= S(0.1);
      a.acc_proj_.b->value = *acc_bias_init;
    }
    return a;
  }

  // Independent trainable maps reconciling the two stream widths.
  std::pair<Var<S>, Var<S>> project_streams(Tape<S>& t, Var<S> x_hyp, Var<S> x_shared) const {
    return {proj_hyp_.forward(t, x_hyp), proj_shared_.forward(t, x_shared)};
  }

  Var<S> add_fusion(Tape<S>& t, Var<S> hyp_p, Var<S> shared_p) const {
    return add(gru_hyp_.final_state(t, hyp_p), gru_shared_.final_state(t, shared_p));
  }

  Var<S> concat_fusion(Tape<S>& t, Var<S> hyp_p, Var<S> shared_p) const {
    Var<S> seq = hyp_p.rows() == 0 ? shared_p : concat_rows<S>({hyp_p, shared_p});
    return gru_cat_.final_state(t, seq);
  }

  // Single-head scaled dot-product attention, residual-connected with the
  // query stream. Returns U x D_f (pooled later).
  Var<S> attention_fusion(Tape<S>& t, Var<S> hyp_p, Var<S> shared_p) const {
    if (hyp_p.rows() == 0) throw std::invalid_argument("attention_fusion: empty query");
    if (shared_p.rows() == 0) throw std::invalid_argument("attention_fusion: empty keys");
    const S inv_sqrt = S(1) / std::sqrt(S(hyp_p.cols()));
    Var<S> attn = softmax_rows(scale(matmul_nt(hyp_p, shared_p), inv_sqrt));
    return add(matmul(attn, shared_p), hyp_p);
  }

  // Fuses per the configured scheme; the result is pooled to 1 x D_f.
  Var<S> fuse_pooled(Tape<S>& t, Var<S> hyp_p, Var<S> shared_p) const {
    switch (cfg_.scheme) {
      case FusionScheme::kAcousticOnly:
        return gru_shared_.final_state(t, shared_p);
      case FusionScheme::kLinguisticOnly:
        return gru_hyp_.final_state(t, hyp_p);
      case FusionScheme::kAdd:
        return add_fusion(t, hyp_p, shared_p);
      case FusionScheme::kConcat:
        return concat_fusion(t, hyp_p, shared_p);
      case FusionScheme::kAttention:
        if (hyp_p.rows() == 0) {
          // degenerate early-training case: fall back to the acoustic stream
          return gru_shared_.final_state(t, shared_p);
        }
        return mean_rows(attention_fusion(t, hyp_p, shared_p));
    }
    throw std::logic_error("unreachable");
  }

  // 3-layer GELU stack; X_Accent taps the second-layer activation.
  ArOutputs<S> pool_and_classify(Tape<S>& t, Var<S> fused_pooled) const {
    Var<S> h1 = gelu(cls1_.forward(t, fused_pooled));
    Var<S> h2 = gelu(cls2_.forward(t, h1));
    Var<S> logits = cls3_.forward(t, h2);
    Var<S> acc_in = cfg_.stop_gradient_accent ? detach(h2) : h2;
    return {logits, acc_proj_.forward(t, acc_in)};
  }

  ArOutputs<S> forward(Tape<S>& t, Var<S> x_hyp, Var<S> x_shared) const {
    auto [hyp_p, shared_p] = project_streams(t, x_hyp, x_shared);
    return pool_and_classify(t, fuse_pooled(t, hyp_p, shared_p));
  }

  const FusionConfig& config() const { return cfg_; }

 private:
  FusionConfig cfg_;
  LinearLayer<S> proj_hyp_, proj_shared_;
  GruLayer<S> gru_hyp_, gru_shared_, gru_cat_;
  LinearLayer<S> cls1_, cls2_, cls3_, acc_proj_;
};

// Softmax cross-entropy against the accent label.
template <typename S>
Var<S> ar_loss(Var<S> accent_logits, int label) {
  if (label < 0 || label >= accent_logits.cols()) {
    throw std::invalid_argument("ar_loss: label out of range");
  }
  return cross_entropy_rows(accent_logits, {0}, {label});
}

}  // namespace mmger
