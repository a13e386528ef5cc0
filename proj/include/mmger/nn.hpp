// Building-block layers: linear, layer norm, multi-head self-attention,
// pre-norm transformer block, GRU. Each holds pointers into a ParamStore;
// forward passes build nodes on a caller-owned tape.
#pragma once

#include "mmger/params.hpp"
#include "mmger/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace mmger {

template <typename S>
struct LinearLayer {
  Param<S>* w = nullptr;  // in x out
  Param<S>* b = nullptr;  // 1 x out

  static LinearLayer create(ParamStore<S>& ps, const std::string& prefix, Eigen::Index in,
                            Eigen::Index out, std::mt19937_64& rng) {
    LinearLayer l;
    l.w = &ps.create(prefix + ".w", in, out);
    l.b = &ps.create(prefix + ".b", 1, out);
    glorot_init(*l.w, rng);
    return l;
  }

  Var<S> forward(Tape<S>& t, Var<S> x) const {
    return add_rowvec(matmul(x, leaf(t, w->value, &w->grad)), leaf(t, b->value, &b->grad));
  }
};

template <typename S>
struct LayerNormLayer {
  Param<S>* gain = nullptr;
  Param<S>* bias = nullptr;

  static LayerNormLayer create(ParamStore<S>& ps, const std::string& prefix, Eigen::Index dim) {
    LayerNormLayer l;
    l.gain = &ps.create(prefix + ".g", 1, dim);
    l.bias = &ps.create(prefix + ".b", 1, dim);
    l.gain->value.setOnes();
    return l;
  }

  Var<S> forward(Tape<S>& t, Var<S> x) const {
    return layer_norm(x, leaf(t, gain->value, &gain->grad), leaf(t, bias->value, &bias->grad));
  }
};

template <typename S>
struct MhsaLayer {
  LinearLayer<S> q, k, v, o;
  int heads = 1;
  bool causal = false;

  static MhsaLayer create(ParamStore<S>& ps, const std::string& prefix, Eigen::Index dim,
                          int heads, bool causal, std::mt19937_64& rng) {
    if (dim % heads != 0) throw std::invalid_argument("mhsa: dim not divisible by heads");
    MhsaLayer m;
    m.q = LinearLayer<S>::create(ps, prefix + ".q", dim, dim, rng);
    m.k = LinearLayer<S>::create(ps, prefix + ".k", dim, dim, rng);
    m.v = LinearLayer<S>::create(ps, prefix + ".v", dim, dim, rng);
    m.o = LinearLayer<S>::create(ps, prefix + ".o", dim, dim, rng);
    m.heads = heads;
    m.causal = causal;
    return m;
  }

  Var<S> forward(Tape<S>& t, Var<S> x) const {
    const Eigen::Index dim = x.cols();
    const Eigen::Index dh = dim / heads;
    Var<S> Q = q.forward(t, x), K = k.forward(t, x), V = v.forward(t, x);
    std::vector<Var<S>> outs;
    const S inv_sqrt = S(1) / std::sqrt(S(dh));
    for (int h = 0; h < heads; ++h) {
      Var<S> qh = slice_cols(Q, h * dh, dh);
      Var<S> kh = slice_cols(K, h * dh, dh);
      Var<S> vh = slice_cols(V, h * dh, dh);
      Var<S> scores = scale(matmul_nt(qh, kh), inv_sqrt);
      Var<S> attn = causal ? softmax_rows_causal(scores) : softmax_rows(scores);
      outs.push_back(matmul(attn, vh));
    }
    return o.forward(t, concat_cols(outs));
  }
};

// Pre-norm block: x += attn(ln1(x)); x += ffn(ln2(x)); optional depthwise
// conv sub-block between them.
template <typename S>
struct TransformerBlock {
  LayerNormLayer<S> ln1, ln2, ln3;
  MhsaLayer<S> attn;
  LinearLayer<S> ff1, ff2;
  Param<S>* conv_w = nullptr;
  Param<S>* conv_b = nullptr;
  LinearLayer<S> conv_point;
  bool use_conv = false;

  static TransformerBlock create(ParamStore<S>& ps, const std::string& prefix, Eigen::Index dim,
                                 Eigen::Index ffn_dim, int heads, bool causal, bool use_conv,
                                 std::mt19937_64& rng) {
    TransformerBlock b;
    b.ln1 = LayerNormLayer<S>::create(ps, prefix + ".ln1", dim);
    b.attn = MhsaLayer<S>::create(ps, prefix + ".attn", dim, heads, causal, rng);
    b.ln2 = LayerNormLayer<S>::create(ps, prefix + ".ln2", dim);
    b.ff1 = LinearLayer<S>::create(ps, prefix + ".ff1", dim, ffn_dim, rng);
    b.ff2 = LinearLayer<S>::create(ps, prefix + ".ff2", ffn_dim, dim, rng);
    b.use_conv = use_conv;
    if (use_conv) {
      b.ln3 = LayerNormLayer<S>::create(ps, prefix + ".ln3", dim);
      b.conv_w = &ps.create(prefix + ".conv.w", 3, dim);
      b.conv_b = &ps.create(prefix + ".conv.b", 1, dim);
      glorot_init(*b.conv_w, rng);
      b.conv_point = LinearLayer<S>::create(ps, prefix + ".conv.p", dim, dim, rng);
    }
    return b;
  }

  Var<S> forward(Tape<S>& t, Var<S> x) const {
    x = add(x, attn.forward(t, ln1.forward(t, x)));
    if (use_conv) {
      Var<S> c = depthwise_conv3(ln3.forward(t, x), leaf(t, conv_w->value, &conv_w->grad),
                                 leaf(t, conv_b->value, &conv_b->grad));
      x = add(x, conv_point.forward(t, gelu(c)));
    }
    x = add(x, ff2.forward(t, gelu(ff1.forward(t, ln2.forward(t, x)))));
    return x;
  }
};

// GRU over a sequence of row vectors, zero initial state. Gate layout in
// the 3H-wide weights is [r | z | n].
template <typename S>
struct GruLayer {
  Param<S>* wi = nullptr;  // in x 3H
  Param<S>* wh = nullptr;  // H x 3H
  Param<S>* bi = nullptr;  // 1 x 3H
  Param<S>* bh = nullptr;  // 1 x 3H
  Eigen::Index hidden = 0;

  static GruLayer create(ParamStore<S>& ps, const std::string& prefix, Eigen::Index in,
                         Eigen::Index hidden, std::mt19937_64& rng) {
    GruLayer g;
    g.hidden = hidden;
    g.wi = &ps.create(prefix + ".wi", in, 3 * hidden);
    g.wh = &ps.create(prefix + ".wh", hidden, 3 * hidden);
    g.bi = &ps.create(prefix + ".bi", 1, 3 * hidden);
    g.bh = &ps.create(prefix + ".bh", 1, 3 * hidden);
    glorot_init(*g.wi, rng);
    glorot_init(*g.wh, rng);
    return g;
  }

  // Returns the final hidden state (1 x H). Empty input returns the zero state.
  Var<S> final_state(Tape<S>& t, Var<S> x) const {
    const Eigen::Index H = hidden;
    Var<S> h = constant(t, Mat<S>(Mat<S>::Zero(1, H)));
    if (x.rows() == 0) return h;
    Var<S> vwi = leaf(t, wi->value, &wi->grad);
    Var<S> vwh = leaf(t, wh->value, &wh->grad);
    Var<S> vbi = leaf(t, bi->value, &bi->grad);
    Var<S> vbh = leaf(t, bh->value, &bh->grad);
    Var<S> ones = constant(t, Mat<S>(Mat<S>::Ones(1, H)));
    for (Eigen::Index step = 0; step < x.rows(); ++step) {
      Var<S> xt = slice_rows(x, step, 1);
      Var<S> gi = add_rowvec(matmul(xt, vwi), vbi);
      Var<S> gh = add_rowvec(matmul(h, vwh), vbh);
      Var<S> r = sigmoid(add(slice_cols(gi, 0, H), slice_cols(gh, 0, H)));
      Var<S> z = sigmoid(add(slice_cols(gi, H, H), slice_cols(gh, H, H)));
      Var<S> n = tanh_op(add(slice_cols(gi, 2 * H, H), hadamard(r, slice_cols(gh, 2 * H, H))));
      // h = (1 - z) .* n + z .* h
      h = add(hadamard(sub(ones, z), n), hadamard(z, h));
    }
    return h;
  }
};

// Fixed sinusoidal positions, added to the input sequence.
template <typename S>
Mat<S> sinusoidal_positions(Eigen::Index len, Eigen::Index dim) {
  Mat<S> pe = Mat<S>::Zero(len, dim);
  for (Eigen::Index p = 0; p < len; ++p) {
    for (Eigen::Index i = 0; i < dim; i += 2) {
      double angle = double(p) / std::pow(10000.0, double(i) / double(dim));
      pe(p, i) = static_cast<S>(std::sin(angle));
      if (i + 1 < dim) pe(p, i + 1) = static_cast<S>(std::cos(angle));
    }
  }
  return pe;
}

template <typename S>
Var<S> add_positions(Tape<S>& t, Var<S> x) {
  return add(x, constant(t, sinusoidal_positions<S>(x.rows(), x.cols())));
}

}  // namespace mmger
