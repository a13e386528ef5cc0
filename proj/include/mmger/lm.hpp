// Toy decoder-only causal LM. The embedding table is shared with every
// hypothesis lookup and tied to the output projection. Pretrained on
// grammar text, then frozen; a checksum guards the frozen contract.
#pragma once

#include "mmger/nn.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace mmger {

struct LmConfig {
  int vocab_size = 26;  // symbols (incl. blank) + eos + pad
  int d_model = 64;
  int num_layers = 4;
  int num_heads = 4;
  int ffn_dim = 128;
  int context_cap = 512;
  int eos_id = 24;
  int pad_id = 25;
};

template <typename S>
class CausalLm {
 public:
  static CausalLm create(ParamStore<S>& ps, const std::string& prefix, const LmConfig& cfg,
                         std::mt19937_64& rng) {
    if (cfg.d_model % cfg.num_heads != 0) throw std::invalid_argument("lm: dim % heads != 0");
    CausalLm lm;
    lm.cfg_ = cfg;
    lm.prefix_ = prefix;
    lm.store_ = &ps;
    lm.embed_ = &ps.create(prefix + ".embed", cfg.vocab_size, cfg.d_model);
    normal_init(*lm.embed_, rng, 0.1);
    for (int l = 0; l < cfg.num_layers; ++l) {
      lm.blocks_.push_back(TransformerBlock<S>::create(ps, prefix + ".blk" + std::to_string(l),
                                                       cfg.d_model, cfg.ffn_dim, cfg.num_heads,
                                                       /*causal=*/true, /*use_conv=*/false, rng));
    }
    lm.out_norm_ = LayerNormLayer<S>::create(ps, prefix + ".out_ln", cfg.d_model);
    return lm;
  }

  // Binds an already-populated store (e.g. after load()).
  static CausalLm attach(ParamStore<S>& ps, const std::string& prefix, const LmConfig& cfg) {
    std::mt19937_64 throwaway(0);
    ParamStore<S> shape;
    CausalLm tmpl = create(shape, prefix, cfg, throwaway);
    for (const auto& p : shape.items()) {
      Param<S>& dst = ps.at(p->name);
      if (dst.value.rows() != p->value.rows() || dst.value.cols() != p->value.cols()) {
        throw std::runtime_error("lm checkpoint shape mismatch: " + p->name);
      }
    }
    CausalLm lm = tmpl;
    lm.rebind(ps);
    return lm;
  }

  const LmConfig& config() const { return cfg_; }
  Param<S>& embedding() { return *embed_; }
  const Mat<S>& embedding_values() const { return embed_->value; }

  Var<S> embed_leaf(Tape<S>& t) const { return leaf(t, embed_->value, &embed_->grad); }

  Var<S> embed_tokens(Tape<S>& t, const std::vector<int>& ids) const {
    return gather_rows(embed_leaf(t), ids);
  }

  // Causal forward over a mixed continuous-input sequence; returns
  // per-position vocab logits via the tied (transposed) embedding table.
  Var<S> forward(Tape<S>& t, Var<S> inputs) const {
    if (inputs.rows() > cfg_.context_cap) throw std::invalid_argument("lm: context cap exceeded");
    if (inputs.cols() != cfg_.d_model) throw std::invalid_argument("lm: input width mismatch");
    Var<S> x = add_positions(t, inputs);
    for (const auto& b : blocks_) x = b.forward(t, x);
    x = out_norm_.forward(t, x);
    return matmul_nt(x, embed_leaf(t));
  }

  uint64_t checksum() const { return store_->checksum(prefix_ + "."); }

  void freeze() { store_->set_trainable(prefix_ + ".", false); }

 private:
  void rebind(ParamStore<S>& ps) {
    store_ = &ps;
    embed_ = &ps.at(prefix_ + ".embed");
    auto relink = [&ps](LinearLayer<S>& l) {
      l.w = &ps.at(l.w->name);
      l.b = &ps.at(l.b->name);
    };
    auto relink_ln = [&ps](LayerNormLayer<S>& l) {
      l.gain = &ps.at(l.gain->name);
      l.bias = &ps.at(l.bias->name);
    };
    for (auto& b : blocks_) {
      relink_ln(b.ln1);
      relink_ln(b.ln2);
      relink(b.attn.q);
      relink(b.attn.k);
      relink(b.attn.v);
      relink(b.attn.o);
      relink(b.ff1);
      relink(b.ff2);
    }
    relink_ln(out_norm_);
  }

  LmConfig cfg_;
  std::string prefix_;
  ParamStore<S>* store_ = nullptr;
  Param<S>* embed_ = nullptr;
  std::vector<TransformerBlock<S>> blocks_;
  LayerNormLayer<S> out_norm_;
};

struct PretrainSettings {
  int epochs = 15;
  int batch_size = 32;
  double lr = 1e-3;
  int warmup_steps = 200;
  double heldout_fraction = 0.05;
  uint64_t seed = 7;
  // corpus-shape knobs forwarded to build_pretrain_text
  double repeat_prob = 0.6;
  double denoise_prob = 0.0;
  double denoise_sub_rate = 0.15;
  double denoise_indel_rate = 0.0;
  double denoise_merge_prob = 0.0;
};

struct PretrainResult {
  uint64_t checksum = 0;
  double heldout_ppl = 0.0;
  double heldout_ce = 0.0;
};

// Next-token training on text only. Sequences are wrapped as
// [eos, s1..sL] -> [s1..sL, eos].
template <typename S>
PretrainResult pretrain_lm(CausalLm<S>& lm, ParamStore<S>& ps,
                           const std::vector<std::vector<int>>& transcripts,
                           const PretrainSettings& st) {
  if (transcripts.empty()) throw std::invalid_argument("pretrain_lm: empty corpus");
  const int eos = lm.config().eos_id;

  const size_t heldout = std::max<size_t>(1, size_t(double(transcripts.size()) * st.heldout_fraction));
  const size_t ntrain = transcripts.size() - heldout;

  auto sequence_loss = [&](Tape<S>& t, const std::vector<int>& seq) {
    std::vector<int> in{eos};
    in.insert(in.end(), seq.begin(), seq.end());
    std::vector<int> tgt(seq);
    tgt.push_back(eos);
    Var<S> logits = lm.forward(t, lm.embed_tokens(t, in));
    std::vector<Eigen::Index> pos(in.size());
    for (size_t i = 0; i < in.size(); ++i) pos[i] = Eigen::Index(i);
    return cross_entropy_rows(logits, pos, tgt);
  };

  AdamOptimizer<S> opt(S(st.lr), st.warmup_steps);
  std::mt19937_64 shuffle_rng(st.seed);
  std::vector<size_t> order(ntrain);
  for (size_t i = 0; i < ntrain; ++i) order[i] = i;

  for (int epoch = 0; epoch < st.epochs; ++epoch) {
    for (size_t i = ntrain; i > 1; --i) {
      std::swap(order[i - 1], order[size_t(shuffle_rng() % i)]);
    }
    for (size_t b = 0; b < ntrain; b += size_t(st.batch_size)) {
      const size_t end = std::min(ntrain, b + size_t(st.batch_size));
      Tape<S> tape;
      std::vector<Var<S>> losses;
      for (size_t i = b; i < end; ++i) losses.push_back(sequence_loss(tape, transcripts[order[i]]));
      Var<S> total = losses[0];
      for (size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
      total = scale(total, S(1) / S(losses.size()));
      ps.zero_grad();
      tape.backward(total.id);
      opt.step(ps);
    }
  }

  // held-out cross entropy
  double ce = 0.0;
  int count = 0;
  for (size_t i = ntrain; i < transcripts.size(); ++i) {
    Tape<S> tape;
    Var<S> l = sequence_loss(tape, transcripts[i]);
    ce += double(l.val()(0, 0)) * double(transcripts[i].size() + 1);
    count += int(transcripts[i].size() + 1);
  }
  ce /= double(count);

  lm.freeze();
  PretrainResult res;
  res.heldout_ce = ce;
  res.heldout_ppl = std::exp(ce);
  res.checksum = lm.checksum();
  return res;
}

// Frozen-LM checkpoint: JSON header (config, checksum, held-out ppl)
// followed by the raw parameter block. Loading refuses a checksum mismatch.
template <typename S>
void save_lm_checkpoint(const std::string& path, const ParamStore<S>& ps, const LmConfig& cfg,
                        const PretrainResult& res) {
  nlohmann::json hdr;
  hdr["magic"] = "mmger-frozen-lm-v1";
  hdr["vocab_size"] = cfg.vocab_size;
  hdr["d_model"] = cfg.d_model;
  hdr["num_layers"] = cfg.num_layers;
  hdr["num_heads"] = cfg.num_heads;
  hdr["ffn_dim"] = cfg.ffn_dim;
  hdr["context_cap"] = cfg.context_cap;
  hdr["eos_id"] = cfg.eos_id;
  hdr["pad_id"] = cfg.pad_id;
  hdr["checksum"] = res.checksum;
  hdr["heldout_ppl"] = res.heldout_ppl;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write lm checkpoint: " + path);
  const std::string h = hdr.dump();
  uint32_t hlen = uint32_t(h.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(h.data(), hlen);
  ps.save(out, "lm.");
  if (!out) throw std::runtime_error("write failure: " + path);
}

template <typename S>
std::pair<LmConfig, PretrainResult> load_lm_checkpoint(const std::string& path,
                                                       ParamStore<S>& ps) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open lm checkpoint: " + path);
  uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string h(hlen, '\0');
  in.read(h.data(), hlen);
  nlohmann::json hdr = nlohmann::json::parse(h);
  if (hdr.at("magic") != "mmger-frozen-lm-v1") throw std::runtime_error("bad lm checkpoint magic");
  LmConfig cfg;
  cfg.vocab_size = hdr.at("vocab_size");
  cfg.d_model = hdr.at("d_model");
  cfg.num_layers = hdr.at("num_layers");
  cfg.num_heads = hdr.at("num_heads");
  cfg.ffn_dim = hdr.at("ffn_dim");
  cfg.context_cap = hdr.at("context_cap");
  cfg.eos_id = hdr.at("eos_id");
  cfg.pad_id = hdr.at("pad_id");
  PretrainResult res;
  res.checksum = hdr.at("checksum");
  res.heldout_ppl = hdr.at("heldout_ppl");
  ps.load(in);
  ps.set_trainable("lm.", false);
  if (ps.checksum("lm.") != res.checksum) {
    throw std::runtime_error("frozen LM checksum mismatch in " + path);
  }
  return {cfg, res};
}

// Greedy continuation after the last prompt position; eos stops and is
// not returned.
template <typename S>
std::vector<int> lm_greedy_decode(const CausalLm<S>& lm, const Mat<S>& prompt, int max_len) {
  std::vector<int> out;
  Mat<S> seq = prompt;
  for (int step = 0; step < max_len; ++step) {
    Tape<S> tape;
    Var<S> logits = lm.forward(tape, constant(tape, seq));
    const Eigen::Index last = logits.rows() - 1;
    int best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits.val()(last, k) > logits.val()(last, best)) best = int(k);
    }
    if (best == lm.config().eos_id) break;
    out.push_back(best);
    seq.conservativeResize(seq.rows() + 1, Eigen::NoChange);
    seq.row(seq.rows() - 1) = lm.embedding_values().row(best);
  }
  return out;
}

}  // namespace mmger
