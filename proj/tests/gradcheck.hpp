// Central finite-difference oracle for gradient tests (64-bit only).
#pragma once

#include "mmger/params.hpp"

#include <functional>
#include <random>

namespace mmger::test {

// Rebuilds the scalar loss from scratch, runs backward, returns the value.
inline double eval_with_grads(ParamStore<double>& ps,
                              const std::function<Var<double>(Tape<double>&)>& build) {
  ps.zero_grad();
  Tape<double> t;
  Var<double> loss = build(t);
  double v = loss.val()(0, 0);
  t.backward(loss.id);
  return v;
}

// Checks `ndirs` random coordinates of `param` against central differences.
// Returns the max relative error observed.
inline double fd_check_param(ParamStore<double>& ps,
                             const std::function<Var<double>(Tape<double>&)>& build,
                             Param<double>& param, int ndirs, std::mt19937_64& rng,
                             double eps = 1e-5) {
  eval_with_grads(ps, build);
  Mat<double> analytic = param.grad;
  double worst = 0.0;
  for (int d = 0; d < ndirs; ++d) {
    const Eigen::Index i = Eigen::Index(rng() % uint64_t(param.value.rows()));
    const Eigen::Index j = Eigen::Index(rng() % uint64_t(param.value.cols()));
    const double orig = param.value(i, j);
    param.value(i, j) = orig + eps;
    Tape<double> tp;
    const double up = build(tp).val()(0, 0);
    param.value(i, j) = orig - eps;
    Tape<double> tm;
    const double dn = build(tm).val()(0, 0);
    param.value(i, j) = orig;
    const double fd = (up - dn) / (2 * eps);
    const double an = analytic(i, j);
    const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace mmger::test
