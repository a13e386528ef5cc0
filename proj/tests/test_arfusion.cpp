#include "doctest.h"

#include "gradcheck.hpp"
#include "mmger/arfusion.hpp"

using namespace mmger;

namespace {

FusionConfig tiny_fusion(FusionScheme s) {
  FusionConfig fc;
  fc.scheme = s;
  fc.fusion_dim = 6;
  fc.num_accents = 4;
  fc.lm_dim = 8;
  fc.shared_concat_dim = 10;
  return fc;
}

LmConfig tiny_lm_cfg() {
  LmConfig cfg;
  cfg.vocab_size = 12;
  cfg.d_model = 8;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.ffn_dim = 16;
  cfg.eos_id = 10;
  cfg.pad_id = 11;
  return cfg;
}

}  // namespace

TEST_CASE("embed_hypothesis looks up frozen-table rows and rejects blanks") {
  std::mt19937_64 rng(1);
  ParamStore<double> ps;
  CausalLm<double> lm = CausalLm<double>::create(ps, "lm", tiny_lm_cfg(), rng);
  Tape<double> t;
  Var<double> e = embed_hypothesis(t, lm, {3, 1, 3});
  REQUIRE(e.rows() == 3);
  CHECK((e.val().row(0) - lm.embedding_values().row(3)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((e.val().row(1) - lm.embedding_values().row(1)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((e.val().row(2) - e.val().row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(embed_hypothesis(t, lm, {}).rows() == 0);
  CHECK_THROWS_AS(embed_hypothesis(t, lm, {2, 0, 1}), std::invalid_argument);
}

TEST_CASE("every fusion scheme produces 1xA logits and a 1xD_lm accent vector") {
  std::mt19937_64 seq_rng(2);
  for (FusionScheme s :
       {FusionScheme::kAcousticOnly, FusionScheme::kLinguisticOnly, FusionScheme::kAdd,
        FusionScheme::kConcat, FusionScheme::kAttention}) {
    std::mt19937_64 rng(3);
    ParamStore<double> ps;
    ArFusion<double> arf = ArFusion<double>::create(ps, "f", tiny_fusion(s), rng);
    Tape<double> t;
    Var<double> hyp = constant(t, Mat<double>(Mat<double>::Random(4, 8)));
    Var<double> shared = constant(t, Mat<double>(Mat<double>::Random(7, 10)));
    ArOutputs<double> out = arf.forward(t, hyp, shared);
    CHECK(out.accent_logits.rows() == 1);
    CHECK(out.accent_logits.cols() == 4);
    CHECK(out.x_accent.rows() == 1);
    CHECK(out.x_accent.cols() == 8);
    CHECK(out.accent_logits.val().allFinite());
  }
  (void)seq_rng;
}

TEST_CASE("empty hypothesis: every scheme falls back to something well-defined") {
  for (FusionScheme s :
       {FusionScheme::kAcousticOnly, FusionScheme::kLinguisticOnly, FusionScheme::kAdd,
        FusionScheme::kConcat, FusionScheme::kAttention}) {
    std::mt19937_64 rng(4);
    ParamStore<double> ps;
    ArFusion<double> arf = ArFusion<double>::create(ps, "f", tiny_fusion(s), rng);
    Tape<double> t;
    Var<double> hyp = constant(t, Mat<double>(0, 8));
    Var<double> shared = constant(t, Mat<double>(Mat<double>::Random(5, 10)));
    ArOutputs<double> out = arf.forward(t, hyp, shared);
    CHECK(out.accent_logits.val().allFinite());
  }
}

TEST_CASE("attention fusion: single key makes the context exactly that key") {
  std::mt19937_64 rng(5);
  ParamStore<double> ps;
  ArFusion<double> arf = ArFusion<double>::create(ps, "f", tiny_fusion(FusionScheme::kAttention), rng);
  Tape<double> t;
  Mat<double> hyp_p = Mat<double>::Random(3, 6);
  Mat<double> key = Mat<double>::Random(1, 6);
  Var<double> fused = arf.attention_fusion(t, constant(t, hyp_p), constant(t, key));
  REQUIRE(fused.rows() == 3);
  // softmax over one key is 1, so each output row is query + key (residual)
  for (int r = 0; r < 3; ++r) {
    CHECK((fused.val().row(r) - (hyp_p.row(r) + key.row(0))).cwiseAbs().maxCoeff() < 1e-12);
  }

  // identical keys: attention averages to the same vector regardless of weights
  Mat<double> keys = key.replicate(4, 1);
  Var<double> fused2 = arf.attention_fusion(t, constant(t, hyp_p), constant(t, keys));
  CHECK((fused2.val() - fused.val()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("add fusion with zero GRUs is exactly zero") {
  std::mt19937_64 rng(6);
  ParamStore<double> ps;
  ArFusion<double> arf = ArFusion<double>::create(ps, "f", tiny_fusion(FusionScheme::kAdd), rng);
  for (const auto& p : ps.items()) {
    if (p->name.rfind("f.gru", 0) == 0) p->value.setZero();
  }
  Tape<double> t;
  Var<double> fused = arf.fuse_pooled(t, constant(t, Mat<double>(Mat<double>::Random(3, 6))),
                                      constant(t, Mat<double>(Mat<double>::Random(5, 6))));
  CHECK(fused.val().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("concat fusion consumes hypothesis rows then acoustic rows") {
  std::mt19937_64 rng(7);
  ParamStore<double> ps;
  ArFusion<double> arf = ArFusion<double>::create(ps, "f", tiny_fusion(FusionScheme::kConcat), rng);
  Mat<double> hyp_p = Mat<double>::Random(2, 6);
  Mat<double> shared_p = Mat<double>::Random(3, 6);
  Tape<double> t;
  Var<double> a = arf.concat_fusion(t, constant(t, hyp_p), constant(t, shared_p));
  // must equal running the same GRU over the stacked sequence
  Mat<double> stacked(5, 6);
  stacked << hyp_p, shared_p;
  GruLayer<double> gru;
  gru.hidden = 6;
  gru.wi = &ps.at("f.gru_cat.wi");
  gru.wh = &ps.at("f.gru_cat.wh");
  gru.bi = &ps.at("f.gru_cat.bi");
  gru.bh = &ps.at("f.gru_cat.bh");
  Var<double> b = gru.final_state(t, constant(t, stacked));
  CHECK((a.val() - b.val()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ar_loss: uniform logits give ln(A); bad labels throw") {
  Tape<double> t;
  Var<double> logits = constant(t, Mat<double>(Mat<double>::Zero(1, 4)));
  CHECK(std::abs(ar_loss(logits, 2).val()(0, 0) - std::log(4.0)) < 1e-12);
  CHECK_THROWS_AS(ar_loss(logits, 4), std::invalid_argument);
  CHECK_THROWS_AS(ar_loss(logits, -1), std::invalid_argument);
}

TEST_CASE("fusion gradients match finite differences for every scheme") {
  Mat<double> hyp = Mat<double>::Random(3, 8);
  Mat<double> shared = Mat<double>::Random(5, 10);
  for (FusionScheme s :
       {FusionScheme::kAcousticOnly, FusionScheme::kLinguisticOnly, FusionScheme::kAdd,
        FusionScheme::kConcat, FusionScheme::kAttention}) {
    std::mt19937_64 rng(8);
    ParamStore<double> ps;
    ArFusion<double> arf = ArFusion<double>::create(ps, "f", tiny_fusion(s), rng);
    auto build = [&](Tape<double>& t) {
      ArOutputs<double> out = arf.forward(t, constant(t, hyp), constant(t, shared));
      return add(ar_loss(out.accent_logits, 1), mean_all(out.x_accent));
    };
    CHECK(mmger::test::fd_check_param(ps, build, ps.at("f.proj_hyp.w"), 10, rng) < 1e-4);
    CHECK(mmger::test::fd_check_param(ps, build, ps.at("f.proj_shared.w"), 10, rng) < 1e-4);
    CHECK(mmger::test::fd_check_param(ps, build, ps.at("f.cls2.w"), 10, rng) < 1e-4);
    CHECK(mmger::test::fd_check_param(ps, build, ps.at("f.acc_proj.w"), 10, rng) < 1e-4);
  }
}

TEST_CASE("stop_gradient_accent blocks the classifier path from the prompt loss") {
  Mat<double> hyp = Mat<double>::Random(3, 8);
  Mat<double> shared = Mat<double>::Random(5, 10);
  for (bool stop : {false, true}) {
    std::mt19937_64 rng(9);
    ParamStore<double> ps;
    FusionConfig fc = tiny_fusion(FusionScheme::kAdd);
    fc.stop_gradient_accent = stop;
    ArFusion<double> arf = ArFusion<double>::create(ps, "f", fc, rng);
    ps.zero_grad();
    Tape<double> t;
    ArOutputs<double> out = arf.forward(t, constant(t, hyp), constant(t, shared));
    Var<double> loss = mean_all(out.x_accent);  // stand-in for the prompt loss
    t.backward(loss.id);
    const double cls_grad = ps.at("f.cls1.w").grad.cwiseAbs().maxCoeff();
    const double proj_grad = ps.at("f.acc_proj.w").grad.cwiseAbs().maxCoeff();
    CHECK(proj_grad > 0.0);
    if (stop) {
      CHECK(cls_grad == 0.0);
    } else {
      CHECK(cls_grad > 0.0);
    }
  }
}
