// Full training-state checkpoints: every parameter group with its Adam
// moments, trainer progress, the frozen-LM reference checksum and the
// resolved config. Enough state to resume at an epoch boundary with an
// identical loss trajectory.
#pragma once

#include "mmger/params.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

namespace mmger {

struct CheckpointMeta {
  std::string config_json;
  uint64_t frozen_lm_checksum = 0;
  int64_t step = 0;
  int epoch = 0;
  uint64_t data_seed = 0;
};

template <typename S>
void save_checkpoint(const std::string& path, const ParamStore<S>& ps, const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  nlohmann::json hdr;
  hdr["magic"] = "mmger-ckpt-v1";
  hdr["config"] = meta.config_json;
  hdr["frozen_lm_checksum"] = meta.frozen_lm_checksum;
  hdr["step"] = meta.step;
  hdr["epoch"] = meta.epoch;
  hdr["data_seed"] = meta.data_seed;
  const std::string h = hdr.dump();
  uint32_t hlen = uint32_t(h.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(h.data(), hlen);

  uint32_t count = uint32_t(ps.items().size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& p : ps.items()) {
    uint32_t len = uint32_t(p->name.size());
    int64_t r = p->value.rows(), c = p->value.cols();
    uint8_t trainable = p->trainable ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(p->name.data(), len);
    out.write(reinterpret_cast<const char*>(&r), sizeof(r));
    out.write(reinterpret_cast<const char*>(&c), sizeof(c));
    out.write(reinterpret_cast<const char*>(&trainable), sizeof(trainable));
    out.write(reinterpret_cast<const char*>(p->value.data()), sizeof(S) * p->value.size());
    out.write(reinterpret_cast<const char*>(p->m.data()), sizeof(S) * p->m.size());
    out.write(reinterpret_cast<const char*>(p->v.data()), sizeof(S) * p->v.size());
  }
  if (!out) throw std::runtime_error("checkpoint write failure: " + path);
}

// Loads into an existing, identically built store.
template <typename S>
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<S>& ps) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string h(hlen, '\0');
  in.read(h.data(), hlen);
  nlohmann::json hdr = nlohmann::json::parse(h);
  if (hdr.at("magic") != "mmger-ckpt-v1") throw std::runtime_error("bad checkpoint magic");
  CheckpointMeta meta;
  meta.config_json = hdr.at("config");
  meta.frozen_lm_checksum = hdr.at("frozen_lm_checksum");
  meta.step = hdr.at("step");
  meta.epoch = hdr.at("epoch");
  meta.data_seed = hdr.at("data_seed");

  uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string name(len, '\0');
    in.read(name.data(), len);
    int64_t r = 0, c = 0;
    uint8_t trainable = 1;
    in.read(reinterpret_cast<char*>(&r), sizeof(r));
    in.read(reinterpret_cast<char*>(&c), sizeof(c));
    in.read(reinterpret_cast<char*>(&trainable), sizeof(trainable));
    Param<S>* p = ps.find(name);
    if (!p) throw std::runtime_error("checkpoint param not in model (config mismatch?): " + name);
    if (p->value.rows() != r || p->value.cols() != c) {
      throw std::runtime_error("checkpoint shape mismatch: " + name);
    }
    p->trainable = trainable != 0;
    in.read(reinterpret_cast<char*>(p->value.data()), sizeof(S) * r * c);
    in.read(reinterpret_cast<char*>(p->m.data()), sizeof(S) * r * c);
    in.read(reinterpret_cast<char*>(p->v.data()), sizeof(S) * r * c);
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  }
  return meta;
}

}  // namespace mmger
