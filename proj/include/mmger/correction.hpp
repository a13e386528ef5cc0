// Multi-modal frame-level representation, coarse-grained token segment,
// and assembly of the full LM prompt with the five trainable special
// tokens plus the trainable blank-surrogate embedding.
#pragma once

#include "mmger/arfusion.hpp"
#include "mmger/lm.hpp"

#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mmger {

enum class MmcMode { kBoth, kAcousticOnly, kLinguisticOnly };
enum class Granularity { kBoth, kCoarseOnly, kFineOnly };

inline MmcMode mmc_mode_from_string(const std::string& s) {
  if (s == "both") return MmcMode::kBoth;
  if (s == "acoustic_only") return MmcMode::kAcousticOnly;
  if (s == "linguistic_only") return MmcMode::kLinguisticOnly;
  throw std::invalid_argument("unknown mmc mode: " + s);
}

inline Granularity granularity_from_string(const std::string& s) {
  if (s == "both") return Granularity::kBoth;
  if (s == "coarse_only") return Granularity::kCoarseOnly;
  if (s == "fine_only") return Granularity::kFineOnly;
  throw std::invalid_argument("unknown granularity: " + s);
}

enum class SegTag { kSom, kMmc, kEom, kSog, kMgc, kEog, kTra, kAccent, kLabel };

inline char seg_tag_char(SegTag t) {
  switch (t) {
    case SegTag::kSom: return 'S';
    case SegTag::kMmc: return 'M';
    case SegTag::kEom: return 'E';
    case SegTag::kSog: return 's';
    case SegTag::kMgc: return 'g';
    case SegTag::kEog: return 'e';
    case SegTag::kTra: return 'T';
    case SegTag::kAccent: return 'A';
    case SegTag::kLabel: return 'L';
  }
  return '?';
}

template <typename S>
struct SpecialTokens {
  Param<S>* som = nullptr;
  Param<S>* eom = nullptr;
  Param<S>* sog = nullptr;
  Param<S>* eog = nullptr;
  Param<S>* tra = nullptr;
  Param<S>* blank = nullptr;  // surrogate embedding for the CTC blank

  // `separator_init` (typically the frozen LM's eos embedding) seeds the
  // bracket tokens with the separator role they play, so the LM treats the
  // prompt like the segmented text it was pretrained on from step one.
  // The tokens remain fully trainable.
  static SpecialTokens create(ParamStore<S>& ps, const std::string& prefix, int lm_dim,
                              std::mt19937_64& rng, const Mat<S>* separator_init = nullptr) {
    SpecialTokens st;
    auto mk = [&](const char* name) {
      Param<S>* p = &ps.create(prefix + "." + name, 1, lm_dim);
      normal_init(*p, rng, 0.1);
      return p;
    };
    st.som = mk("som");
    st.eom = mk("eom");
    st.sog = mk("sog");
    st.eog = mk("eog");
    st.tra = mk("tra");
    st.blank = mk("blank");
    if (separator_init) {
      for (Param<S>* p : {st.som, st.eom, st.sog, st.eog, st.tra}) p->value = *separator_init;
    }
    return st;
  }
};

// Per-frame hypothesis embedding: blanks map to the trainable surrogate,
// everything else to the frozen table row. Length is preserved.
template <typename S>
Var<S> embed_frame_hypothesis(Tape<S>& t, const CausalLm<S>& lm, const SpecialTokens<S>& st,
                              const std::vector<int>& frame_labels) {
  Var<S> table = lm.embed_leaf(t);
  Var<S> blank_vec = leaf(t, st.blank->value, &st.blank->grad);
  std::vector<Var<S>> rows;
  rows.reserve(frame_labels.size());
  // group consecutive non-blank ids into one gather to keep the graph small
  size_t i = 0;
  while (i < frame_labels.size()) {
    if (frame_labels[i] == kBlankId) {
      rows.push_back(blank_vec);
      ++i;
      continue;
    }
    std::vector<int> run;
    while (i < frame_labels.size() && frame_labels[i] != kBlankId) run.push_back(frame_labels[i++]);
    rows.push_back(gather_rows(table, run));
  }
  if (rows.empty()) return gather_rows(table, {});
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

template <typename S>
struct MmcProjector {
  LinearLayer<S> proj;  // 2*D_lm -> D_lm

  static MmcProjector create(ParamStore<S>& ps, const std::string& prefix, int lm_dim,
                             std::mt19937_64& rng) {
    MmcProjector p{LinearLayer<S>::create(ps, prefix + ".proj", 2 * lm_dim, lm_dim, rng)};
    // Start near zero: the multi-modal segment then barely registers with
    // the frozen LM's attention until training finds content worth
    // injecting. A full-scale random projection of hypothesis-token
    // embeddings would act as a decoy for the LM's copy mechanism.
    p.proj.w->value *= S(0.1);
    return p;
  }
};

// X_MMC: feature-dim concat of adapted acoustics with per-frame hypothesis
// embeddings, projected back to the LM width. Single-modality modes pass
// the surviving stream through unchanged (Table-style M1/M2 ablations).
template <typename S>
Var<S> build_mmc(Tape<S>& t, Var<S> x_asr, Var<S> x_hyp_frames, MmcMode mode,
                 const MmcProjector<S>& proj) {
  if (mode == MmcMode::kAcousticOnly) return x_asr;
  if (mode == MmcMode::kLinguisticOnly) return x_hyp_frames;
  if (x_asr.rows() != x_hyp_frames.rows()) {
    throw std::logic_error("build_mmc: frame-count mismatch between acoustic and linguistic streams");
  }
  return proj.proj.forward(t, concat_cols<S>({x_asr, x_hyp_frames}));
}

// X_MGC is the same lookup as the hypothesis embedding, by definition.
template <typename S>
Var<S> build_mgc(Tape<S>& t, const CausalLm<S>& lm, const std::vector<int>& regular_tokens) {
  return embed_hypothesis(t, lm, regular_tokens);
}

template <typename S>
struct PromptSequence {
  Var<S> seq;                 // N x D_lm
  std::vector<SegTag> tags;   // one per row
  std::vector<int> label_ids; // empty in inference mode
  Eigen::Index accent_pos = -1;

  std::string tag_string() const {
    std::string s;
    for (SegTag t : tags) s.push_back(seg_tag_char(t));
    return s;
  }

  // One line per segment: tag and row count (test/debug format).
  std::string dump() const {
    std::ostringstream os;
    size_t i = 0;
    while (i < tags.size()) {
      size_t j = i;
      while (j < tags.size() && tags[j] == tags[i]) ++j;
      os << seg_tag_char(tags[i]) << ' ' << (j - i) << '\n';
      i = j;
    }
    return os.str();
  }
};

// Prompt order: [SOM] X_MMC [EOM] [SOG] X_MGC [EOG] [TRA] [X_Accent]
// (+ label embeddings when training). Ablations drop a segment together
// with its bracketing special tokens.
template <typename S>
PromptSequence<S> assemble_prompt(Tape<S>& t, const CausalLm<S>& lm, const SpecialTokens<S>& st,
                                  std::optional<Var<S>> mmc, std::optional<Var<S>> mgc,
                                  Var<S> x_accent, const std::vector<int>& labels,
                                  bool training_mode) {
  if (!mmc.has_value() && !mgc.has_value()) {
    throw std::invalid_argument("assemble_prompt: both correction segments absent");
  }
  std::vector<Var<S>> parts;
  PromptSequence<S> ps;
  auto push = [&](Var<S> v, SegTag tag) {
    parts.push_back(v);
    for (Eigen::Index i = 0; i < v.rows(); ++i) ps.tags.push_back(tag);
  };
  auto tok = [&](Param<S>* p) { return leaf(t, p->value, &p->grad); };

  if (mmc.has_value()) {
    push(tok(st.som), SegTag::kSom);
    push(*mmc, SegTag::kMmc);
    push(tok(st.eom), SegTag::kEom);
  }
  if (mgc.has_value()) {
    push(tok(st.sog), SegTag::kSog);
    push(*mgc, SegTag::kMgc);
    push(tok(st.eog), SegTag::kEog);
  }
  push(tok(st.tra), SegTag::kTra);
  ps.accent_pos = Eigen::Index(ps.tags.size());
  push(x_accent, SegTag::kAccent);
  if (training_mode && !labels.empty()) {
    push(lm.embed_tokens(t, labels), SegTag::kLabel);
    ps.label_ids = labels;
  }
  ps.seq = concat_rows(parts);
  return ps;
}

// Teacher-forced cross entropy over label + eos positions only. The
// position holding X_Accent predicts the first label; the last label
// position predicts eos.
template <typename S>
Var<S> lm_loss(Tape<S>& t, const CausalLm<S>& lm, const PromptSequence<S>& prompt) {
  if (prompt.label_ids.empty()) throw std::invalid_argument("lm_loss: prompt carries no labels");
  Var<S> logits = lm.forward(t, prompt.seq);
  std::vector<Eigen::Index> positions;
  std::vector<int> targets;
  for (size_t i = 0; i < prompt.label_ids.size(); ++i) {
    positions.push_back(prompt.accent_pos + Eigen::Index(i));
    targets.push_back(prompt.label_ids[i]);
  }
  positions.push_back(prompt.accent_pos + Eigen::Index(prompt.label_ids.size()));
  targets.push_back(lm.config().eos_id);
  return cross_entropy_rows(logits, positions, targets);
}

}  // namespace mmger
