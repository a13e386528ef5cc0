#include "doctest.h"

#include "mmger/lm.hpp"
#include "mmger/synthdata.hpp"

#include <cstdio>
#include <filesystem>

using namespace mmger;

namespace {

LmConfig tiny_lm_cfg() {
  LmConfig cfg;
  cfg.vocab_size = 12;
  cfg.d_model = 8;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.ffn_dim = 16;
  cfg.eos_id = 10;
  cfg.pad_id = 11;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mmger_lm_" + name)).string();
}

}  // namespace

TEST_CASE("causal mask: perturbing position k leaves logits before k unchanged") {
  std::mt19937_64 rng(31);
  ParamStore<double> ps;
  CausalLm<double> lm = CausalLm<double>::create(ps, "lm", tiny_lm_cfg(), rng);
  Mat<double> seq = Mat<double>::Random(6, 8);
  Tape<double> t1;
  Mat<double> base = lm.forward(t1, constant(t1, seq)).val();
  for (int k = 1; k < 6; ++k) {
    Mat<double> mod = seq;
    mod.row(k).setConstant(3.0);
    Tape<double> t2;
    Mat<double> out = lm.forward(t2, constant(t2, mod)).val();
    CHECK((out.topRows(k) - base.topRows(k)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.row(k) - base.row(k)).cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("output logits are tied to the embedding table") {
  std::mt19937_64 rng(32);
  ParamStore<double> ps;
  CausalLm<double> lm = CausalLm<double>::create(ps, "lm", tiny_lm_cfg(), rng);
  Mat<double> seq = Mat<double>::Random(3, 8);
  Tape<double> t;
  Mat<double> before = lm.forward(t, constant(t, seq)).val();
  CHECK(before.cols() == 12);
  // with a continuous input the table only enters at the tied output
  // projection, so doubling row 7 of the table doubles logit column 7
  // and leaves the rest untouched
  ps.at("lm.embed").value.row(7) *= 2.0;
  Tape<double> t2;
  Mat<double> after = lm.forward(t2, constant(t2, seq)).val();
  CHECK((after.col(7) - 2.0 * before.col(7)).cwiseAbs().maxCoeff() < 1e-12);
  after.col(7) = before.col(7);
  CHECK((after - before).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pretraining beats the uniform baseline and freezes the weights") {
  std::mt19937_64 rng(33);
  ParamStore<double> ps;
  LmConfig cfg = tiny_lm_cfg();
  CausalLm<double> lm = CausalLm<double>::create(ps, "lm", cfg, rng);

  // grammar-structured text: only 3 successors per symbol, so ppl << vocab
  BigramGrammar grammar(555, 10, 3);
  std::mt19937_64 trng(5);
  std::vector<std::vector<int>> corpus;
  for (int i = 0; i < 400; ++i) corpus.push_back(grammar.sample(trng, {4, 8}));

  PretrainSettings st;
  st.epochs = 3;
  st.batch_size = 16;
  st.warmup_steps = 20;
  PretrainResult res = pretrain_lm(lm, ps, corpus, st);
  CHECK(res.heldout_ppl < double(cfg.vocab_size));
  CHECK(res.checksum == lm.checksum());

  // frozen: an optimizer step with fake gradients must not move anything
  for (const auto& p : ps.items()) p->grad.setOnes();
  AdamOptimizer<double> opt(0.5, 0);
  uint64_t before = lm.checksum();
  opt.step(ps);
  CHECK(lm.checksum() == before);

  // round-trip through the checkpoint file
  const std::string path = temp_path("ckpt.bin");
  save_lm_checkpoint(path, ps, cfg, res);
  ParamStore<double> ps2;
  auto [cfg2, res2] = load_lm_checkpoint<double>(path, ps2);
  CHECK(cfg2.vocab_size == cfg.vocab_size);
  CHECK(res2.checksum == res.checksum);
  CHECK(ps2.checksum("lm.") == res.checksum);
  CausalLm<double> lm2 = CausalLm<double>::attach(ps2, "lm", cfg2);
  Mat<double> probe = Mat<double>::Random(4, 8);
  Tape<double> ta, tb;
  CHECK((lm.forward(ta, constant(ta, probe)).val() - lm2.forward(tb, constant(tb, probe)).val())
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  // tampered checkpoint: flip one payload byte, loading must refuse
  {
    std::fstream fio(path, std::ios::in | std::ios::out | std::ios::binary);
    fio.seekp(-8, std::ios::end);
    char byte = 0x5a;
    fio.write(&byte, 1);
  }
  ParamStore<double> ps3;
  CHECK_THROWS_AS(load_lm_checkpoint<double>(path, ps3), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("greedy decode: deterministic, capped, stops at eos without emitting it") {
  std::mt19937_64 rng(34);
  ParamStore<double> ps;
  LmConfig cfg = tiny_lm_cfg();
  CausalLm<double> lm = CausalLm<double>::create(ps, "lm", cfg, rng);
  Mat<double> prompt = Mat<double>::Random(3, 8);
  std::vector<int> a = lm_greedy_decode(lm, prompt, 6);
  std::vector<int> b = lm_greedy_decode(lm, prompt, 6);
  CHECK(a == b);
  CHECK(a.size() <= 6);
  for (int tok : a) CHECK(tok != cfg.eos_id);
  CHECK(lm_greedy_decode(lm, prompt, 0).empty());

  // bias the output so eos always wins: decode must stop immediately
  ps.at("lm.embed").value.row(cfg.eos_id).setConstant(50.0);
  ps.at("lm.out_ln.b").value.setConstant(1.0);
  std::vector<int> c = lm_greedy_decode(lm, prompt, 6);
  CHECK(c.empty());
}

TEST_CASE("context cap and width checks") {
  std::mt19937_64 rng(35);
  ParamStore<double> ps;
  LmConfig cfg = tiny_lm_cfg();
  cfg.context_cap = 5;
  CausalLm<double> lm = CausalLm<double>::create(ps, "lm", cfg, rng);
  Tape<double> t;
  CHECK_THROWS_AS(lm.forward(t, constant(t, Mat<double>(Mat<double>::Random(6, 8)))),
                  std::invalid_argument);
  CHECK_THROWS_AS(lm.forward(t, constant(t, Mat<double>(Mat<double>::Random(3, 7)))),
                  std::invalid_argument);
}
