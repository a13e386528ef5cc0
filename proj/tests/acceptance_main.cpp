// End-to-end gate: one pass/fail line per criterion, nonzero exit if any
// gating criterion fails. Slow criteria run at full desk scale.
#include "mmger/ablation.hpp"
#include "mmger/checkpoint.hpp"
#include "mmger/config.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

using namespace mmger;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << criterion << ": " << detail
            << std::endl;
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------- criterion 1

double brute_force_ctc_prob(const Mat<double>& logits, const std::vector<int>& target) {
  const int T = int(logits.rows()), V = int(logits.cols());
  Mat<double> p(T, V);
  for (int t = 0; t < T; ++t) {
    double m = logits.row(t).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(t).array() - m).exp();
    p.row(t) = e / e.sum();
  }
  double total = 0.0;
  std::vector<int> path(size_t(T), 0);
  const long count = long(std::pow(double(V), T));
  for (long code = 0; code < count; ++code) {
    long c = code;
    for (int t = 0; t < T; ++t) {
      path[size_t(t)] = int(c % V);
      c /= V;
    }
    if (regularize(path) != target) continue;
    double prob = 1.0;
    for (int t = 0; t < T; ++t) prob *= p(t, path[size_t(t)]);
    total += prob;
  }
  return total;
}

void criterion_1() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(20240817);
  int bad = 0;
  double worst = 0;
  for (int c = 0; c < 100; ++c) {
    const int T = 1 + int(rng() % 6);
    const int V = 2 + int(rng() % 2);
    const int L = 1 + int(rng() % 3);
    Mat<double> logits(T, V);
    for (int i = 0; i < logits.size(); ++i) logits.data()[i] = 2.0 * rand_normal(rng);
    std::vector<int> target;
    for (int i = 0; i < L; ++i) target.push_back(1 + int(rng() % (V - 1)));
    Tape<double> t;
    Var<double> loss = ctc_loss(t, constant(t, logits), target);
    const double brute = brute_force_ctc_prob(logits, target);
    if (brute == 0.0) {
      if (!std::isinf(loss.val()(0, 0))) ++bad;
      continue;
    }
    const double err = std::abs(std::exp(-loss.val()(0, 0)) - brute);
    worst = std::max(worst, err);
    if (err > 1e-6) ++bad;
  }
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "loss vs alignment enumeration, 100 cases, worst abs err %.2e, %.1f s", worst,
                secs);
  report(1, bad == 0 && secs < 10.0, buf);
}

// ---------------------------------------------------------------- criterion 2

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

double fd_worst(ParamStore<double>& ps, const std::function<Var<double>(Tape<double>&)>& build,
                Param<double>& param, int ndirs, std::mt19937_64& rng, double eps = 1e-5) {
  ps.zero_grad();
  {
    Tape<double> t;
    Var<double> loss = build(t);
    t.backward(loss.id);
  }
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
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
  }
  return worst;
}

void criterion_2() {
  auto t0 = Clock::now();
  double worst = 0;
  auto track = [&](double e) { worst = std::max(worst, e); };

  // CTC path
  {
    std::mt19937_64 rng(91);
    ParamStore<double> ps;
    Param<double>& logits = ps.create("logits", 7, 5);
    normal_init(logits, rng, 1.0);
    std::vector<int> target = {2, 3, 2};
    auto build = [&](Tape<double>& t) { return ctc_loss(t, ps.use(t, logits), target); };
    track(fd_worst(ps, build, logits, 24, rng));
  }

  // every fusion scheme plus the classification loss
  Mat<double> hyp = Mat<double>::Random(3, 8);
  Mat<double> shared = Mat<double>::Random(5, 10);
  for (FusionScheme s :
       {FusionScheme::kAcousticOnly, FusionScheme::kLinguisticOnly, FusionScheme::kAdd,
        FusionScheme::kConcat, FusionScheme::kAttention}) {
    std::mt19937_64 rng(92);
    ParamStore<double> ps;
    FusionConfig fc;
    fc.scheme = s;
    fc.fusion_dim = 6;
    fc.num_accents = 4;
    fc.lm_dim = 8;
    fc.shared_concat_dim = 10;
    ArFusion<double> arf = ArFusion<double>::create(ps, "f", fc, rng);
    auto build = [&](Tape<double>& t) {
      ArOutputs<double> out = arf.forward(t, constant(t, hyp), constant(t, shared));
      return add(ar_loss(out.accent_logits, 2), mean_all(out.x_accent));
    };
    track(fd_worst(ps, build, ps.at("f.proj_hyp.w"), 20, rng));
    track(fd_worst(ps, build, ps.at("f.proj_shared.w"), 20, rng));
    track(fd_worst(ps, build, ps.at("f.cls1.w"), 20, rng));
  }

  // prompt loss through adapter, MMC projector, special tokens, the BLANK
  // surrogate and the accent-vector projection
  {
    std::mt19937_64 rng(93);
    ParamStore<double> ps;
    CausalLm<double> lm = CausalLm<double>::create(ps, "lm", tiny_lm_cfg(), rng);
    lm.freeze();
    SpecialTokens<double> st = SpecialTokens<double>::create(ps, "prompt", 8, rng);
    MmcProjector<double> proj = MmcProjector<double>::create(ps, "mmc", 8, rng);
    Adapter<double> ad = Adapter<double>::create(ps, "adapter", 6, 8, 12, 2, rng);
    FusionConfig fc;
    fc.scheme = FusionScheme::kAdd;
    fc.fusion_dim = 6;
    fc.num_accents = 4;
    fc.lm_dim = 8;
    fc.shared_concat_dim = 10;
    ArFusion<double> arf = ArFusion<double>::create(ps, "f", fc, rng);

    Mat<double> asr_hidden = Mat<double>::Random(4, 6);
    Mat<double> shared_cat = Mat<double>::Random(4, 10);
    std::vector<int> frame_labels = {0, 3, 3, 5};
    std::vector<int> regular = {3, 5};
    std::vector<int> labels = {3, 5};
    auto build = [&](Tape<double>& t) {
      Var<double> x_asr = ad.forward(t, constant(t, asr_hidden));
      Var<double> x_hyp_frames = embed_frame_hypothesis(t, lm, st, frame_labels);
      Var<double> mmc = build_mmc(t, x_asr, x_hyp_frames, MmcMode::kBoth, proj);
      Var<double> mgc = build_mgc(t, lm, regular);
      ArOutputs<double> ar =
          arf.forward(t, embed_hypothesis(t, lm, regular), constant(t, shared_cat));
      PromptSequence<double> pr = assemble_prompt<double>(t, lm, st, mmc, mgc, ar.x_accent, labels, true);
      return lm_loss(t, lm, pr);
    };
    track(fd_worst(ps, build, ps.at("adapter.proj.w"), 20, rng));
    track(fd_worst(ps, build, ps.at("adapter.blk0.ff1.w"), 20, rng));
    track(fd_worst(ps, build, ps.at("mmc.proj.w"), 20, rng));
    track(fd_worst(ps, build, *st.som, 20, rng));
    track(fd_worst(ps, build, *st.eog, 20, rng));
    track(fd_worst(ps, build, *st.tra, 20, rng));
    track(fd_worst(ps, build, *st.blank, 20, rng));
    track(fd_worst(ps, build, ps.at("f.acc_proj.w"), 20, rng));
  }

  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "64-bit analytic vs finite-difference gradients, worst rel err %.2e, %.1f s",
                worst, secs);
  report(2, worst <= 1e-4 && secs < 120.0, buf);
}

// ------------------------------------------------------- criteria 3 and 6-8

std::vector<Utterance> take(const std::vector<Utterance>& v, size_t n) {
  return {v.begin(), v.begin() + std::min(n, v.size())};
}

struct Pipeline {
  RunConfig cfg;
  fs::path dir;
  std::vector<Utterance> train, dev;
  std::map<std::string, Mat<float>> frozen_lm;  // name -> weights
  double lm_ppl = 0;

  explicit Pipeline() {
    cfg = default_run_config();
    dir = fs::temp_directory_path() / "mmger_acceptance";
    fs::remove_all(dir);
    auto manifests = generate_corpus(cfg.data, dir.string());
    train = load_utterances(manifests[0]);
    dev = load_utterances(manifests[1]);
  }
  ~Pipeline() { fs::remove_all(dir); }

  void pretrain() {
    BigramGrammar grammar(hash_combine(cfg.data.seed, "grammar"), cfg.data.vocab_size);
    std::mt19937_64 rng(hash_combine(cfg.pretrain.seed, "pretrain-text"));
    std::vector<std::vector<int>> corpus =
        build_pretrain_text(grammar, rng, cfg.pretrain_num_transcripts,
                            {cfg.data.len_min, cfg.data.len_max}, cfg.lm.eos_id, 10, 80,
                            cfg.pretrain.repeat_prob, cfg.pretrain.denoise_prob,
                            cfg.pretrain.denoise_sub_rate, cfg.pretrain.denoise_indel_rate,
                            cfg.pretrain.denoise_merge_prob);
    ParamStore<float> ps;
    std::mt19937_64 init(hash_combine(cfg.pretrain.seed, "lm-init"));
    CausalLm<float> lm = CausalLm<float>::create(ps, "lm", cfg.lm, init);
    PretrainResult res = pretrain_lm(lm, ps, corpus, cfg.pretrain);
    lm_ppl = res.heldout_ppl;
    for (const auto& p : ps.items()) frozen_lm[p->name] = p->value;
  }

  std::function<void(ParamStore<float>&)> loader() const {
    const auto* weights = &frozen_lm;
    return [weights](ParamStore<float>& ps) {
      for (const auto& [name, value] : *weights) ps.at(name).value = value;
    };
  }
};

void criterion_3(Pipeline& pipe) {
  // short but real joint run on a training subset
  MmgerConfig cfg = pipe.cfg.trainer;
  cfg.epochs = 1;
  MmgerModel<float> model = MmgerModel<float>::build(cfg, pipe.cfg.lm, pipe.loader());
  Trainer<float> trainer(model);
  const uint64_t lm_before = model.lm->checksum();
  const uint64_t tokens_before = model.ps.checksum("prompt.");
  trainer.train(take(pipe.train, 64));
  const bool lm_same = model.lm->checksum() == lm_before;
  const bool tokens_moved = model.ps.checksum("prompt.") != tokens_before;
  report(3, lm_same && tokens_moved,
         std::string("frozen-LM checksum ") + (lm_same ? "unchanged" : "CHANGED") +
             "; special tokens + surrogate " + (tokens_moved ? "updated" : "STUCK"));
}

// ---------------------------------------------------------------- criterion 4

void criterion_4() {
  std::mt19937_64 rng(44);
  ParamStore<double> ps;
  CausalLm<double> lm = CausalLm<double>::create(ps, "lm", tiny_lm_cfg(), rng);
  SpecialTokens<double> st = SpecialTokens<double>::create(ps, "prompt", 8, rng);
  int bad = 0;
  for (int c = 0; c < 200; ++c) {
    const int T = 1 + int(rng() % 12);  // frame count
    const int U = int(rng() % 6);       // regularized hypothesis length
    const int L = 1 + int(rng() % 6);   // label length
    Tape<double> t;
    std::vector<int> frame_labels;
    for (int i = 0; i < T; ++i) frame_labels.push_back(int(rng() % 8));
    Var<double> x_hyp_frames = embed_frame_hypothesis(t, lm, st, frame_labels);
    if (x_hyp_frames.rows() != T) ++bad;  // three-way length equality, part 1
    Var<double> mmc = x_hyp_frames;
    std::vector<int> regular;
    for (int i = 0; i < U; ++i) regular.push_back(1 + int(rng() % 7));
    Var<double> mgc = build_mgc(t, lm, regular);
    Var<double> acc = constant(t, Mat<double>(Mat<double>::Random(1, 8)));
    std::vector<int> labels;
    for (int i = 0; i < L; ++i) labels.push_back(1 + int(rng() % 7));

    const int mode = c % 3;  // full / coarse-only / fine-only shapes
    std::optional<Var<double>> ommc = mode == 1 ? std::nullopt : std::optional<Var<double>>(mmc);
    std::optional<Var<double>> omgc = mode == 2 ? std::nullopt : std::optional<Var<double>>(mgc);
    PromptSequence<double> pr = assemble_prompt<double>(t, lm, st, ommc, omgc, acc, labels, true);

    std::string want;
    if (mode != 1) want += "S" + std::string(size_t(T), 'M') + "E";
    if (mode != 2) want += "s" + std::string(size_t(U), 'g') + "e";
    want += "TA" + std::string(size_t(L), 'L');
    if (pr.tag_string() != want) ++bad;
    if (pr.seq.rows() != Eigen::Index(want.size())) ++bad;
    const Eigen::Index expect_accent = Eigen::Index(want.find('A'));
    if (pr.accent_pos != expect_accent) ++bad;
  }
  report(4, bad == 0, "prompt length arithmetic and segment order, 200 random shapes");
}

// ---------------------------------------------------------------- criterion 5

std::vector<int> reference_collapse(const std::vector<int>& seq) {
  std::vector<int> dedup;
  for (int v : seq) {
    if (dedup.empty() || dedup.back() != v) dedup.push_back(v);
  }
  std::vector<int> out;
  for (int v : dedup) {
    if (v != 0) out.push_back(v);
  }
  return out;
}

void criterion_5() {
  int bad = 0, total = 0;
  for (int len = 1; len <= 6; ++len) {
    const long count = long(std::pow(3.0, len));
    for (long code = 0; code < count; ++code) {
      std::vector<int> seq(static_cast<size_t>(len), 0);
      long c = code;
      for (int i = 0; i < len; ++i) {
        seq[size_t(i)] = int(c % 3);
        c /= 3;
      }
      ++total;
      if (regularize(seq) != reference_collapse(seq)) ++bad;
    }
  }
  report(5, bad == 0,
         "collapse rule vs brute-force reference on " + std::to_string(total) + " sequences");
}

// ---------------------------------------------------------------- criterion 6

EvalReport criterion_6(Pipeline& pipe) {
  auto t0 = Clock::now();
  MmgerModel<float> model = MmgerModel<float>::build(pipe.cfg.trainer, pipe.cfg.lm, pipe.loader());
  Trainer<float> trainer(model);
  trainer.train(pipe.train);
  EvalReport r = trainer.evaluate(pipe.dev);
  const double secs = seconds_since(t0);
  const bool cer_ok = r.cer_all <= 0.8 * r.baseline_cer_all;
  const bool ar_ok = r.ar_accuracy >= 0.80;
  char buf[240];
  std::snprintf(buf, sizeof(buf),
                "dev CER %.4f / %.4f (baseline %.4f / %.4f, need <= %.4f), AR acc %.3f "
                "(need >= 0.80), %.0f s",
                r.cer_all, r.cer_accented, r.baseline_cer_all, r.baseline_cer_accented,
                0.8 * r.baseline_cer_all, r.ar_accuracy, secs);
  report(6, cer_ok && ar_ok && secs <= 1800.0, buf);
  return r;
}

// ---------------------------------------------------------------- criterion 7

void criterion_7(Pipeline& pipe) {
  auto t0 = Clock::now();
  MmgerConfig base = pipe.cfg.trainer;
  base.epochs = 2;  // reduced preset: the matrix has no stated runtime bound
  std::vector<Utterance> train = take(pipe.train, 400);
  std::vector<Utterance> dev = take(pipe.dev, 200);
  auto results = run_ablation_matrix<float>(base, pipe.cfg.lm, pipe.loader(), train, dev,
                                            [](const AblationRowResult& r) {
                                              std::cout << "  row " << r.id << ": "
                                                        << (r.ok ? r.report.cer_line() : r.error)
                                                        << std::endl;
                                            });
  bool all_ok = results.size() == 9;
  for (const auto& r : results) all_ok = all_ok && r.ok;
  std::cout << ablation_to_table(results);
  if (all_ok) {
    double a3 = 0, g1 = 0, g2 = 0;
    for (const auto& r : results) {
      if (r.id == "A3") a3 = r.report.cer_all;
      if (r.id == "G1") g1 = r.report.cer_all;
      if (r.id == "G2") g2 = r.report.cer_all;
    }
    std::cout << "  soft check (non-gating): A3 " << a3 << " <= G1 " << g1 << ": "
              << (a3 <= g1 ? "yes" : "no") << "; <= G2 " << g2 << ": " << (a3 <= g2 ? "yes" : "no")
              << std::endl;
  }
  char buf[120];
  std::snprintf(buf, sizeof(buf), "ablation matrix, 9/9 rows completed, %.0f s",
                seconds_since(t0));
  report(7, all_ok, buf);
}

// ---------------------------------------------------------------- criterion 8

void criterion_8(Pipeline& pipe) {
  auto run = [&]() {
    MmgerConfig cfg = pipe.cfg.trainer;
    cfg.lambda = 1.0;
    cfg.mu = 0.0;
    cfg.lm_path_enabled = false;
    cfg.epochs = 2;
    MmgerModel<float> model = MmgerModel<float>::build(cfg, pipe.cfg.lm, nullptr);
    Trainer<float> trainer(model);
    std::vector<double> losses;
    trainer.train(take(pipe.train, 200),
                  [&](int, int64_t, const StepLosses& l) { losses.push_back(l.total); });
    return losses;
  };
  std::vector<double> a = run();
  std::vector<double> b = run();
  const bool identical = !a.empty() && a == b;
  report(8, identical,
         "CTC-only reduction loss curve, " + std::to_string(a.size()) +
             " steps, bit-for-bit " + (identical ? "identical" : "DIFFERENT"));
}

}  // namespace

int main() {
  std::cout.setf(std::ios::unitbuf);
  criterion_1();
  criterion_2();

  Pipeline pipe;
  std::cout << "  (pretraining the frozen LM...)" << std::endl;
  pipe.pretrain();
  std::cout << "  (held-out ppl " << pipe.lm_ppl << ", uniform " << pipe.cfg.lm.vocab_size << ")"
            << std::endl;

  criterion_3(pipe);
  criterion_4();
  criterion_5();
  criterion_6(pipe);
  criterion_7(pipe);
  criterion_8(pipe);

  std::cout << (g_failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES: ") << (g_failures ? std::to_string(g_failures) : "")
            << std::endl;
  return g_failures == 0 ? 0 : 1;
}
