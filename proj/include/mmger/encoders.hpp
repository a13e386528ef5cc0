// Shared encoder with intermediate-layer taps, the separate ASR encoder,
// and the adapter projecting ASR features into the LM embedding space.
#pragma once

#include "mmger/nn.hpp"

#include <string>
#include <vector>

namespace mmger {

struct EncoderConfig {
  int num_layers = 4;
  int model_dim = 64;
  int ffn_dim = 128;
  int num_heads = 4;
  int subsample_factor = 1;
  std::vector<int> tap_layers = {1, 2, 3, 4};  // 1-based
  bool use_conv_block = false;
  int input_dim = 16;

  void validate() const {
    if (subsample_factor < 1) throw std::invalid_argument("encoder: subsample_factor < 1");
    if (model_dim % num_heads != 0) throw std::invalid_argument("encoder: dim % heads != 0");
    for (int l : tap_layers) {
      if (l < 1 || l > num_layers) throw std::invalid_argument("encoder: tap layer out of range");
    }
  }
};

template <typename S>
struct EncoderOutput {
  Var<S> hidden;             // T' x D_enc
  std::vector<Var<S>> taps;  // each T' x D_enc, in tap_layers order
};

template <typename S>
class Encoder {
 public:
  static Encoder create(ParamStore<S>& ps, const std::string& prefix, const EncoderConfig& cfg,
                        std::mt19937_64& rng) {
    cfg.validate();
    Encoder e;
    e.cfg_ = cfg;
    e.input_ = LinearLayer<S>::create(ps, prefix + ".in", cfg.input_dim, cfg.model_dim, rng);
    for (int l = 0; l < cfg.num_layers; ++l) {
      e.blocks_.push_back(TransformerBlock<S>::create(ps, prefix + ".blk" + std::to_string(l),
                                                      cfg.model_dim, cfg.ffn_dim, cfg.num_heads,
                                                      /*causal=*/false, cfg.use_conv_block, rng));
    }
    e.out_norm_ = LayerNormLayer<S>::create(ps, prefix + ".out_ln", cfg.model_dim);
    return e;
  }

  EncoderOutput<S> forward(Tape<S>& t, const Mat<S>& frames) const {
    if (frames.cols() != cfg_.input_dim) {
      throw std::invalid_argument("encoder: frame feature dim mismatch");
    }
    if (frames.rows() < cfg_.subsample_factor) {
      throw std::invalid_argument("encoder: fewer frames than subsample factor");
    }
    Var<S> x = input_.forward(t, constant(t, frames));
    if (cfg_.subsample_factor > 1) x = stride_pool_rows(x, cfg_.subsample_factor);
    x = add_positions(t, x);
    EncoderOutput<S> out;
    out.taps.resize(cfg_.tap_layers.size());
    for (int l = 0; l < cfg_.num_layers; ++l) {
      x = blocks_[size_t(l)].forward(t, x);
      for (size_t k = 0; k < cfg_.tap_layers.size(); ++k) {
        if (cfg_.tap_layers[k] == l + 1) out.taps[k] = x;
      }
    }
    out.hidden = out_norm_.forward(t, x);
    return out;
  }

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  LinearLayer<S> input_;
  std::vector<TransformerBlock<S>> blocks_;
  LayerNormLayer<S> out_norm_;
};

// Feature-dimension concatenation of the tapped layers (X'_Shared).
template <typename S>
Var<S> tap_concat(const EncoderOutput<S>& out) {
  if (out.taps.empty()) throw std::logic_error("tap_concat: encoder recorded no taps");
  return concat_cols(out.taps);
}

// Two transformer layers plus an output projection to the LM width;
// sequence length is preserved so X'_ASR stays frame-aligned.
template <typename S>
class Adapter {
 public:
  static Adapter create(ParamStore<S>& ps, const std::string& prefix, int enc_dim, int lm_dim,
                        int ffn_dim, int heads, std::mt19937_64& rng) {
    Adapter a;
    for (int l = 0; l < 2; ++l) {
      a.blocks_.push_back(TransformerBlock<S>::create(ps, prefix + ".blk" + std::to_string(l),
                                                      enc_dim, ffn_dim, heads, /*causal=*/false,
                                                      /*use_conv=*/false, rng));
    }
    a.out_norm_ = LayerNormLayer<S>::create(ps, prefix + ".out_ln", enc_dim);
    a.proj_ = LinearLayer<S>::create(ps, prefix + ".proj", enc_dim, lm_dim, rng);
    return a;
  }

  Var<S> forward(Tape<S>& t, Var<S> asr_hidden) const {
    Var<S> x = asr_hidden;
    for (const auto& b : blocks_) x = b.forward(t, x);
    return proj_.forward(t, out_norm_.forward(t, x));
  }

 private:
  std::vector<TransformerBlock<S>> blocks_;
  LayerNormLayer<S> out_norm_;
  LinearLayer<S> proj_;
};

}  // namespace mmger
