// Reverse-mode autodiff on Eigen matrices. One Tape per forward graph;
// Var is a lightweight handle into it. Templated on the scalar so the
// gradient checks can run in double while training runs in float.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmger {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
class Tape;

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat<S>& val() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
};

template <typename S>
class Tape {
 public:
  struct Node {
    Mat<S> value;
    Mat<S> grad;  // empty until touched
    std::function<void(Tape&, const Mat<S>&)> backprop;  // may be null (leaf/constant)
  };

  int push(Mat<S> value, std::function<void(Tape&, const Mat<S>&)> backprop = nullptr) {
    nodes_.push_back(Node{std::move(value), Mat<S>(), std::move(backprop)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Mat<S>& value(int id) const { return nodes_[id].value; }

  // Accumulate into a node's gradient, sizing it on first touch.
  void accumulate(int id, const Mat<S>& g) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) {
      n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    }
    n.grad += g;
  }

  const Mat<S>& grad(int id) const { return nodes_[id].grad; }

  // Backprop from a scalar (1x1) root.
  void backward(int root) {
    if (nodes_[root].value.rows() != 1 || nodes_[root].value.cols() != 1) {
      throw std::invalid_argument("backward: root must be 1x1");
    }
    accumulate(root, Mat<S>::Ones(1, 1));
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.size() != 0 && n.backprop) {
        n.backprop(*this, n.grad);
      }
    }
  }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

template <typename S>
const Mat<S>& Var<S>::val() const {
  return tape->value(id);
}

// ---- graph construction helpers ----

template <typename S>
Var<S> constant(Tape<S>& t, Mat<S> value) {
  return {&t, t.push(std::move(value))};
}

// Leaf whose gradient is forwarded into an external accumulator (a parameter).
template <typename S>
Var<S> leaf(Tape<S>& t, const Mat<S>& value, Mat<S>* grad_sink) {
  int id = t.push(value, [grad_sink](Tape<S>&, const Mat<S>& g) {
    if (grad_sink) *grad_sink += g;
  });
  return {&t, id};
}

// Value passes through, gradient does not.
template <typename S>
Var<S> detach(Var<S> a) {
  return constant(*a.tape, a.val());
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  int ia = a.id, ib = b.id;
  int id = t.push(a.val() + b.val(), [ia, ib](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
  return {&t, id};
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  int ia = a.id, ib = b.id;
  int id = t.push(a.val() - b.val(), [ia, ib](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
  return {&t, id};
}

// a (NxD) + row (1xD), broadcast over rows.
template <typename S>
Var<S> add_rowvec(Var<S> a, Var<S> row) {
  Tape<S>& t = *a.tape;
  int ia = a.id, ib = row.id;
  Mat<S> out = a.val();
  out.rowwise() += Eigen::Matrix<S, 1, Eigen::Dynamic>(row.val().row(0));
  int id = t.push(std::move(out), [ia, ib](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g.colwise().sum());
  });
  return {&t, id};
}

template <typename S>
Var<S> scale(Var<S> a, S c) {
  Tape<S>& t = *a.tape;
  int ia = a.id;
  int id = t.push(Mat<S>(a.val() * c), [ia, c](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, Mat<S>(g * c));
  });
  return {&t, id};
}

template <typename S>
Var<S> hadamard(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  int ia = a.id, ib = b.id;
  int id = t.push(Mat<S>(a.val().cwiseProduct(b.val())),
                  [ia, ib](Tape<S>& t, const Mat<S>& g) {
                    t.accumulate(ia, Mat<S>(g.cwiseProduct(t.value(ib))));
                    t.accumulate(ib, Mat<S>(g.cwiseProduct(t.value(ia))));
                  });
  return {&t, id};
}

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dims differ");
  int ia = a.id, ib = b.id;
  int id = t.push(Mat<S>(a.val() * b.val()), [ia, ib](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, Mat<S>(g * t.value(ib).transpose()));
    t.accumulate(ib, Mat<S>(t.value(ia).transpose() * g));
  });
  return {&t, id};
}

// a * b^T
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dims differ");
  int ia = a.id, ib = b.id;
  int id = t.push(Mat<S>(a.val() * b.val().transpose()),
                  [ia, ib](Tape<S>& t, const Mat<S>& g) {
                    t.accumulate(ia, Mat<S>(g * t.value(ib)));
                    t.accumulate(ib, Mat<S>(g.transpose() * t.value(ia)));
                  });
  return {&t, id};
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Tape<S>& t = *parts[0].tape;
  Eigen::Index cols = parts[0].cols(), rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Mat<S> out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> sizes;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.val();
    ids.push_back(p.id);
    sizes.push_back(p.rows());
    r += p.rows();
  }
  int id = t.push(std::move(out), [ids, sizes](Tape<S>& t, const Mat<S>& g) {
    Eigen::Index r = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (sizes[i] > 0) t.accumulate(ids[i], Mat<S>(g.middleRows(r, sizes[i])));
      r += sizes[i];
    }
  });
  return {&t, id};
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Tape<S>& t = *parts[0].tape;
  Eigen::Index rows = parts[0].rows(), cols = 0;
  for (const auto& p : parts) cols += p.cols();
  Mat<S> out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> sizes;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.val();
    ids.push_back(p.id);
    sizes.push_back(p.cols());
    c += p.cols();
  }
  int id = t.push(std::move(out), [ids, sizes](Tape<S>& t, const Mat<S>& g) {
    Eigen::Index c = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
      t.accumulate(ids[i], Mat<S>(g.middleCols(c, sizes[i])));
      c += sizes[i];
    }
  });
  return {&t, id};
}

template <typename S>
Var<S> slice_cols(Var<S> a, Eigen::Index c0, Eigen::Index n) {
  Tape<S>& t = *a.tape;
  int ia = a.id;
  Eigen::Index rows = a.rows(), cols = a.cols();
  int id = t.push(Mat<S>(a.val().middleCols(c0, n)),
                  [ia, c0, n, rows, cols](Tape<S>& t, const Mat<S>& g) {
                    Mat<S> full = Mat<S>::Zero(rows, cols);
                    full.middleCols(c0, n) = g;
                    t.accumulate(ia, full);
                  });
  return {&t, id};
}

template <typename S>
Var<S> slice_rows(Var<S> a, Eigen::Index r0, Eigen::Index n) {
  Tape<S>& t = *a.tape;
  int ia = a.id;
  Eigen::Index rows = a.rows(), cols = a.cols();
  int id = t.push(Mat<S>(a.val().middleRows(r0, n)),
                  [ia, r0, n, rows, cols](Tape<S>& t, const Mat<S>& g) {
                    Mat<S> full = Mat<S>::Zero(rows, cols);
                    full.middleRows(r0, n) = g;
                    t.accumulate(ia, full);
                  });
  return {&t, id};
}

namespace detail {
template <typename S>
Mat<S> softmax_backward(const Mat<S>& y, const Mat<S>& g) {
  Mat<S> gy = g.cwiseProduct(y);
  Eigen::Matrix<S, Eigen::Dynamic, 1> rowsum = gy.rowwise().sum();
  Mat<S> out = gy - y.cwiseProduct(Mat<S>(rowsum.replicate(1, y.cols())));
  return out;
}
}  // namespace detail

template <typename S>
Var<S> softmax_rows(Var<S> a) {
  Tape<S>& t = *a.tape;
  int ia = a.id;
  Mat<S> y = a.val();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    S m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  Mat<S> ycopy = y;
  int id = t.push(std::move(y), [ia, ycopy](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, detail::softmax_backward(ycopy, g));
  });
  return {&t, id};
}

// Row-wise softmax where row r may only see columns <= r + offset (causal mask).
template <typename S>
Var<S> softmax_rows_causal(Var<S> a, Eigen::Index offset = 0) {
  Tape<S>& t = *a.tape;
  int ia = a.id;
  Mat<S> y = a.val();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    Eigen::Index lim = std::min<Eigen::Index>(r + offset + 1, y.cols());
    S m = y.row(r).head(lim).maxCoeff();
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
      y(r, c) = c < lim ? std::exp(y(r, c) - m) : S(0);
    }
    y.row(r) /= y.row(r).sum();
  }
  Mat<S> ycopy = y;
  int id = t.push(std::move(y), [ia, ycopy](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, detail::softmax_backward(ycopy, g));
  });
  return {&t, id};
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>& t = *a.tape;
  int ia = a.id;
  Mat<S> y = a.val().unaryExpr([](S x) { return S(1) / (S(1) + std::exp(-x)); });
  Mat<S> ycopy = y;
  int id = t.push(std::move(y), [ia, ycopy](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, Mat<S>(g.cwiseProduct(ycopy.cwiseProduct(Mat<S>(Mat<S>::Ones(ycopy.rows(), ycopy.cols()) - ycopy)))));
  });
  return {&t, id};
}

template <typename S>
Var<S> tanh_op(Var<S> a) {
  Tape<S>& t = *a.tape;
  int ia = a.id;
  Mat<S> y = a.val().unaryExpr([](S x) { return std::tanh(x); });
  Mat<S> ycopy = y;
  int id = t.push(std::move(y), [ia, ycopy](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, Mat<S>(g.cwiseProduct(Mat<S>(Mat<S>::Ones(ycopy.rows(), ycopy.cols()) - ycopy.cwiseProduct(ycopy)))));
  });
  return {&t, id};
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
template <typename S>
Var<S> gelu(Var<S> a) {
  Tape<S>& t = *a.tape;
  int ia = a.id;
  const Mat<S>& x = a.val();
  Mat<S> y = x.unaryExpr([](S v) {
    return S(0.5) * v * (S(1) + std::erf(v / std::sqrt(S(2))));
  });
  Mat<S> xcopy = x;
  int id = t.push(std::move(y), [ia, xcopy](Tape<S>& t, const Mat<S>& g) {
    Mat<S> d = xcopy.unaryExpr([](S v) {
      S cdf = S(0.5) * (S(1) + std::erf(v / std::sqrt(S(2))));
      S pdf = std::exp(S(-0.5) * v * v) / std::sqrt(S(2) * S(M_PI));
      return cdf + v * pdf;
    });
    t.accumulate(ia, Mat<S>(g.cwiseProduct(d)));
  });
  return {&t, id};
}

template <typename S>
Var<S> mean_rows(Var<S> a) {
  Tape<S>& t = *a.tape;
  if (a.rows() == 0) throw std::invalid_argument("mean_rows: empty input");
  int ia = a.id;
  Eigen::Index n = a.rows();
  Mat<S> y = a.val().colwise().mean();
  int id = t.push(std::move(y), [ia, n](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, Mat<S>((g / S(n)).replicate(n, 1)));
  });
  return {&t, id};
}

// Mean-pool groups of `stride` consecutive rows; last group may be short.
template <typename S>
Var<S> stride_pool_rows(Var<S> a, Eigen::Index stride) {
  Tape<S>& t = *a.tape;
  if (stride < 1) throw std::invalid_argument("stride_pool_rows: stride < 1");
  int ia = a.id;
  Eigen::Index rows = a.rows();
  Eigen::Index out_rows = (rows + stride - 1) / stride;
  Mat<S> y(out_rows, a.cols());
  for (Eigen::Index r = 0; r < out_rows; ++r) {
    Eigen::Index n = std::min(stride, rows - r * stride);
    y.row(r) = a.val().middleRows(r * stride, n).colwise().mean();
  }
  int id = t.push(std::move(y), [ia, rows, stride](Tape<S>& t, const Mat<S>& g) {
    Mat<S> full(rows, g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      Eigen::Index n = std::min(stride, rows - r * stride);
      full.middleRows(r * stride, n) = (g.row(r) / S(n)).replicate(n, 1);
    }
    t.accumulate(ia, full);
  });
  return {&t, id};
}

template <typename S>
Var<S> mean_all(Var<S> a) {
  Tape<S>& t = *a.tape;
  int ia = a.id;
  Eigen::Index r = a.rows(), c = a.cols();
  Mat<S> y(1, 1);
  y(0, 0) = a.val().mean();
  int id = t.push(std::move(y), [ia, r, c](Tape<S>& t, const Mat<S>& g) {
    t.accumulate(ia, Mat<S>(Mat<S>::Constant(r, c, g(0, 0) / S(r * c))));
  });
  return {&t, id};
}

// Gather rows of `table` by id (embedding lookup). Empty ids -> 0 x cols.
template <typename S>
Var<S> gather_rows(Var<S> table, const std::vector<int>& ids) {
  Tape<S>& t = *table.tape;
  int it = table.id;
  Eigen::Index nrows = table.rows(), cols = table.cols();
  for (int id : ids) {
    if (id < 0 || id >= nrows) throw std::invalid_argument("gather_rows: id out of range");
  }
  Mat<S> y(static_cast<Eigen::Index>(ids.size()), cols);
  for (size_t i = 0; i < ids.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = table.val().row(ids[i]);
  int node = t.push(std::move(y), [it, ids, nrows, cols](Tape<S>& t, const Mat<S>& g) {
    Mat<S> full = Mat<S>::Zero(nrows, cols);
    for (size_t i = 0; i < ids.size(); ++i) full.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(it, full);
  });
  return {&t, node};
}

// Per-row layer norm: y = (x - mean) / sqrt(var + eps) .* gain + bias.
template <typename S>
Var<S> layer_norm(Var<S> a, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  Tape<S>& t = *a.tape;
  int ia = a.id, ig = gain.id, ib = bias.id;
  const Mat<S>& x = a.val();
  Eigen::Index R = x.rows(), D = x.cols();
  Mat<S> xhat(R, D);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    S mu = x.row(r).mean();
    S var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * inv_std(r);
  }
  Mat<S> y = xhat;
  for (Eigen::Index r = 0; r < R; ++r) {
    y.row(r) = xhat.row(r).cwiseProduct(gain.val().row(0)) + bias.val().row(0);
  }
  int id = t.push(std::move(y), [ia, ig, ib, xhat, inv_std](Tape<S>& t, const Mat<S>& g) {
    Eigen::Index R = xhat.rows(), D = xhat.cols();
    const Mat<S>& gain = t.value(ig);
    Mat<S> dx(R, D);
    for (Eigen::Index r = 0; r < R; ++r) {
      Eigen::Matrix<S, 1, Eigen::Dynamic> dxhat = g.row(r).cwiseProduct(gain.row(0));
      S m1 = dxhat.mean();
      S m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
      dx.row(r) = inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2);
    }
    t.accumulate(ia, dx);
    Mat<S> dgain(1, D), dbias(1, D);
    dgain = g.cwiseProduct(xhat).colwise().sum();
    dbias = g.colwise().sum();
    t.accumulate(ig, dgain);
    t.accumulate(ib, dbias);
  });
  return {&t, id};
}

// Depthwise length-3 conv with same-padding: y[t] = sum_k w[k] .* x[t+k-1] + b.
template <typename S>
Var<S> depthwise_conv3(Var<S> a, Var<S> w, Var<S> b) {
  Tape<S>& t = *a.tape;
  if (w.rows() != 3 || w.cols() != a.cols()) throw std::invalid_argument("depthwise_conv3: bad kernel shape");
  int ia = a.id, iw = w.id, ib = b.id;
  const Mat<S>& x = a.val();
  Eigen::Index T = x.rows(), D = x.cols();
  Mat<S> y = Mat<S>::Zero(T, D);
  for (Eigen::Index r = 0; r < T; ++r) {
    for (int k = -1; k <= 1; ++k) {
      Eigen::Index s = r + k;
      if (s >= 0 && s < T) y.row(r) += x.row(s).cwiseProduct(w.val().row(k + 1));
    }
    y.row(r) += b.val().row(0);
  }
  int id = t.push(std::move(y), [ia, iw, ib, T, D](Tape<S>& t, const Mat<S>& g) {
    const Mat<S>& x = t.value(ia);
    const Mat<S>& w = t.value(iw);
    Mat<S> dx = Mat<S>::Zero(T, D), dw = Mat<S>::Zero(3, D);
    for (Eigen::Index r = 0; r < T; ++r) {
      for (int k = -1; k <= 1; ++k) {
        Eigen::Index s = r + k;
        if (s >= 0 && s < T) {
          dx.row(s) += g.row(r).cwiseProduct(w.row(k + 1));
          dw.row(k + 1) += g.row(r).cwiseProduct(x.row(s));
        }
      }
    }
    t.accumulate(ia, dx);
    t.accumulate(iw, dw);
    t.accumulate(ib, g.colwise().sum());
  });
  return {&t, id};
}

// Mean cross-entropy over selected rows of a logits matrix.
template <typename S>
Var<S> cross_entropy_rows(Var<S> logits, const std::vector<Eigen::Index>& positions,
                          const std::vector<int>& targets) {
  if (positions.size() != targets.size() || positions.empty()) {
    throw std::invalid_argument("cross_entropy_rows: bad selection");
  }
  Tape<S>& t = *logits.tape;
  int il = logits.id;
  const Mat<S>& x = logits.val();
  S total = 0;
  for (size_t i = 0; i < positions.size(); ++i) {
    Eigen::Index p = positions[i];
    int tgt = targets[i];
    if (p < 0 || p >= x.rows() || tgt < 0 || tgt >= x.cols()) {
      throw std::invalid_argument("cross_entropy_rows: index out of range");
    }
    S m = x.row(p).maxCoeff();
    S lse = std::log((x.row(p).array() - m).exp().sum()) + m;
    total += lse - x(p, tgt);
  }
  Mat<S> y(1, 1);
  const S k = static_cast<S>(positions.size());
  y(0, 0) = total / k;
  int id = t.push(std::move(y), [il, positions, targets, k](Tape<S>& t, const Mat<S>& g) {
    const Mat<S>& x = t.value(il);
    Mat<S> dx = Mat<S>::Zero(x.rows(), x.cols());
    for (size_t i = 0; i < positions.size(); ++i) {
      Eigen::Index p = positions[i];
      S m = x.row(p).maxCoeff();
      Eigen::Matrix<S, 1, Eigen::Dynamic> e = (x.row(p).array() - m).exp();
      e /= e.sum();
      dx.row(p) += e * (g(0, 0) / k);
      dx(p, targets[i]) -= g(0, 0) / k;
    }
    t.accumulate(il, dx);
  });
  return {&t, id};
}

}  // namespace mmger
