// Named trainable parameters with Adam state, binary serialization and a
// FNV-1a checksum used to enforce the frozen-weights contract.
#pragma once

#include "mmger/tensor.hpp"

#include <cstring>
#include <istream>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace mmger {

template <typename S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  Mat<S> m, v;  // Adam moments
  bool trainable = true;
};

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t hash_combine(uint64_t seed, const std::string& s) {
  uint64_t h = fnv1a(&seed, sizeof(seed));
  return fnv1a(s.data(), s.size(), h);
}

template <typename S>
class ParamStore {
 public:
  Param<S>& create(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw std::invalid_argument("param exists: " + name);
    auto p = std::make_unique<Param<S>>();
    p->name = name;
    p->value = Mat<S>::Zero(rows, cols);
    p->grad = Mat<S>::Zero(rows, cols);
    p->m = Mat<S>::Zero(rows, cols);
    p->v = Mat<S>::Zero(rows, cols);
    index_[name] = static_cast<int>(items_.size());
    items_.push_back(std::move(p));
    return *items_.back();
  }

  Param<S>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }

  Param<S>& at(const std::string& name) {
    Param<S>* p = find(name);
    if (!p) throw std::out_of_range("no such param: " + name);
    return *p;
  }

  const std::vector<std::unique_ptr<Param<S>>>& items() const { return items_; }

  void zero_grad() {
    for (auto& p : items_) p->grad.setZero();
  }

  void set_trainable(const std::string& prefix, bool trainable) {
    for (auto& p : items_) {
      if (p->name.rfind(prefix, 0) == 0) p->trainable = trainable;
    }
  }

  uint64_t checksum(const std::string& prefix = "") const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : items_) {
      if (p->name.rfind(prefix, 0) != 0) continue;
      h = fnv1a(p->name.data(), p->name.size(), h);
      h = fnv1a(p->value.data(), sizeof(S) * p->value.size(), h);
    }
    return h;
  }

  void save(std::ostream& os, const std::string& prefix = "") const {
    uint32_t count = 0;
    for (const auto& p : items_) {
      if (p->name.rfind(prefix, 0) == 0) ++count;
    }
    os.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& p : items_) {
      if (p->name.rfind(prefix, 0) != 0) continue;
      uint32_t len = static_cast<uint32_t>(p->name.size());
      int64_t r = p->value.rows(), c = p->value.cols();
      os.write(reinterpret_cast<const char*>(&len), sizeof(len));
      os.write(p->name.data(), len);
      os.write(reinterpret_cast<const char*>(&r), sizeof(r));
      os.write(reinterpret_cast<const char*>(&c), sizeof(c));
      os.write(reinterpret_cast<const char*>(p->value.data()), sizeof(S) * p->value.size());
    }
  }

  // Loads into existing params (shapes must match) or creates new ones.
  void load(std::istream& is) {
    uint32_t count = 0;
    is.read(reinterpret_cast<char*>(&count), sizeof(count));
    for (uint32_t i = 0; i < count; ++i) {
      uint32_t len = 0;
      is.read(reinterpret_cast<char*>(&len), sizeof(len));
      std::string name(len, '\0');
      is.read(name.data(), len);
      int64_t r = 0, c = 0;
      is.read(reinterpret_cast<char*>(&r), sizeof(r));
      is.read(reinterpret_cast<char*>(&c), sizeof(c));
      Param<S>* p = find(name);
      if (!p) {
        p = &create(name, r, c);
      } else if (p->value.rows() != r || p->value.cols() != c) {
        throw std::runtime_error("param shape mismatch on load: " + name);
      }
      is.read(reinterpret_cast<char*>(p->value.data()), sizeof(S) * r * c);
      if (!is) throw std::runtime_error("truncated param stream at: " + name);
    }
  }

  // Leaf whose backward adds into this parameter's grad accumulator.
  Var<S> use(Tape<S>& t, const std::string& name) {
    Param<S>& p = at(name);
    return leaf(t, p.value, &p.grad);
  }

  Var<S> use(Tape<S>& t, Param<S>& p) { return leaf(t, p.value, &p.grad); }

 private:
  std::vector<std::unique_ptr<Param<S>>> items_;
  std::unordered_map<std::string, int> index_;
};

// Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
template <typename S>
void glorot_init(Param<S>& p, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / double(p.value.rows() + p.value.cols()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j) p.value(i, j) = static_cast<S>(dist(rng));
}

template <typename S>
void normal_init(Param<S>& p, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j) p.value(i, j) = static_cast<S>(dist(rng));
}

// Adam with linear warmup then inverse-sqrt decay.
template <typename S>
class AdamOptimizer {
 public:
  AdamOptimizer(S base_lr, int warmup_steps, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
      : base_lr_(base_lr), warmup_(warmup_steps), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  S learning_rate(int64_t step) const {
    if (warmup_ <= 0) return base_lr_;
    if (step < warmup_) return base_lr_ * S(step + 1) / S(warmup_);
    return base_lr_ * std::sqrt(S(warmup_) / S(step + 1));
  }

  void step(ParamStore<S>& store) {
    const S lr = learning_rate(t_);
    ++t_;
    const S bc1 = S(1) - std::pow(beta1_, S(t_));
    const S bc2 = S(1) - std::pow(beta2_, S(t_));
    for (auto& p : store.items()) {
      if (!p->trainable) continue;
      p->m = beta1_ * p->m + (S(1) - beta1_) * p->grad;
      p->v = beta2_ * p->v + (S(1) - beta2_) * p->grad.cwiseProduct(p->grad);
      Mat<S> mhat = p->m / bc1;
      Mat<S> vhat = p->v / bc2;
      p->value -= lr * mhat.cwiseQuotient(Mat<S>(vhat.cwiseSqrt().array() + eps_));
    }
  }

  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }

 private:
  S base_lr_;
  int warmup_;
  S beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace mmger
