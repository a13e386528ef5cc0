#include "mmger/synthdata.hpp"

#include "mmger/params.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace mmger {

BigramGrammar::BigramGrammar(uint64_t grammar_seed, int vocab_size, int branching)
    : vocab_size_(vocab_size) {
  std::mt19937_64 rng(grammar_seed);
  successors_.resize(vocab_size);
  cumulative_.resize(vocab_size);
  const int nsym = vocab_size - 1;  // ids 1..vocab_size-1
  branching = std::min(branching, nsym);
  for (int s = 1; s < vocab_size; ++s) {
    std::vector<int> pool;
    for (int v = 1; v < vocab_size; ++v) pool.push_back(v);
    // partial Fisher-Yates for `branching` distinct successors
    for (int i = 0; i < branching; ++i) {
      int j = i + rand_int(rng, 0, int(pool.size()) - 1 - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(branching);
    std::sort(pool.begin(), pool.end());
    std::vector<double> w(branching);
    double total = 0;
    for (int i = 0; i < branching; ++i) {
      w[i] = 0.2 + rand_u01(rng);
      total += w[i];
    }
    double acc = 0;
    for (int i = 0; i < branching; ++i) {
      acc += w[i] / total;
      w[i] = acc;
    }
    w.back() = 1.0;
    successors_[s] = std::move(pool);
    cumulative_[s] = std::move(w);
  }
}

bool BigramGrammar::allowed(int from, int to) const {
  const auto& succ = successors_.at(from);
  return std::find(succ.begin(), succ.end(), to) != succ.end();
}

std::vector<int> BigramGrammar::sample(std::mt19937_64& rng,
                                       std::pair<int, int> length_range) const {
  if (length_range.first < 1 || length_range.second < length_range.first) {
    throw std::invalid_argument("sample_transcript: empty length range");
  }
  const int len = rand_int(rng, length_range.first, length_range.second);
  std::vector<int> out;
  out.reserve(len);
  int cur = rand_int(rng, 1, vocab_size_ - 1);
  out.push_back(cur);
  for (int i = 1; i < len; ++i) {
    double u = rand_u01(rng);
    const auto& cum = cumulative_[cur];
    size_t j = 0;
    while (j + 1 < cum.size() && u > cum[j]) ++j;
    cur = successors_[cur][j];
    out.push_back(cur);
  }
  return out;
}

std::vector<int> sample_transcript(uint64_t grammar_seed, std::pair<int, int> length_range,
                                   int vocab_size) {
  BigramGrammar grammar(grammar_seed, vocab_size);
  std::mt19937_64 rng(grammar_seed ^ 0x9e3779b97f4a7c15ull);
  return grammar.sample(rng, length_range);
}

std::vector<std::vector<int>> build_pretrain_text(const BigramGrammar& grammar,
                                                  std::mt19937_64& rng, int num_sequences,
                                                  std::pair<int, int> chain_len_range, int eos_id,
                                                  int min_total_len, int max_total_len,
                                                  double repeat_prob, double denoise_prob,
                                                  double denoise_sub_rate,
                                                  double denoise_indel_rate,
                                                  double denoise_merge_prob,
                                                  double render_prob) {
  if (num_sequences <= 0) throw std::invalid_argument("build_pretrain_text: empty corpus");
  if (min_total_len < 1 || max_total_len < min_total_len) {
    throw std::invalid_argument("build_pretrain_text: bad length budget");
  }
  std::vector<std::vector<int>> out;
  out.reserve(size_t(num_sequences));
  for (int i = 0; i < num_sequences; ++i) {
    const int budget = rand_int(rng, min_total_len, max_total_len);
    std::vector<int> seq;
    std::vector<int> prev;
    auto append = [&](const std::vector<int>& chain) {
      if (!seq.empty()) seq.push_back(eos_id);
      seq.insert(seq.end(), chain.begin(), chain.end());
    };
    while (int(seq.size()) < budget) {
      if (!prev.empty() && rand_u01(rng) < repeat_prob) {
        append(prev);
        continue;
      }
      std::vector<int> chain = grammar.sample(rng, chain_len_range);
      if (render_prob > 0.0 && rand_u01(rng) < render_prob) {
        // Duration-rendered trio: a frame-style rendition of the chain
        // (each symbol held for 2-4 steps, sometimes separated by blank
        // steps), the collapsed draft a frame-wise recognizer would read
        // off it (dedup consecutive, drop blanks), then the clean chain.
        // Where a repeated symbol had no blank between its runs the draft
        // merges them, so the only way to predict the clean chain's
        // duplicates is to consult the rendition's run lengths — the same
        // evidence the frame-level prompt segment carries at correction
        // time.
        std::vector<int> rendered;
        for (int tok : chain) {
          const int dur = rand_int(rng, 2, 4);
          for (int d = 0; d < dur; ++d) rendered.push_back(tok);
          const int blanks = rand_int(rng, 0, 2);
          for (int d = 0; d < blanks; ++d) rendered.push_back(0);
        }
        while (!rendered.empty() && rendered.back() == 0) rendered.pop_back();
        std::vector<int> draft;
        int prev_tok = -1;
        for (int v : rendered) {
          if (v != prev_tok && v != 0) draft.push_back(v);
          prev_tok = v;
        }
        append(rendered);
        append(draft);
        append(chain);
        prev = std::move(chain);
        continue;
      }
      if (denoise_prob > 0.0 && rand_u01(rng) < denoise_prob) {
        // Draft-then-clean pair: a corrupted rendition of the chain,
        // immediately followed by the clean chain. Teaches the model that
        // the segment after a separator is the cleaned-up echo of its
        // predecessor, not always a verbatim one. All later repeats of
        // this chain are clean, so verbatim copies still dominate.
        std::vector<int> noisy;
        for (size_t k = 0; k < chain.size(); ++k) {
          int tok = chain[k];
          if (rand_u01(rng) < denoise_indel_rate) continue;  // dropped token
          // merged duplicate: a repeated symbol collapses into one copy,
          // the shape a greedy frame-wise recognizer most often errs in
          if (k > 0 && chain[k] == chain[k - 1] && !noisy.empty() && noisy.back() == tok &&
              rand_u01(rng) < denoise_merge_prob) {
            continue;
          }
          if (rand_u01(rng) < denoise_sub_rate) {
            int sub = 1 + rand_int(rng, 0, grammar.vocab_size() - 2);
            if (sub == tok) sub = 1 + (sub % (grammar.vocab_size() - 1));
            tok = sub;
          }
          noisy.push_back(tok);
          if (rand_u01(rng) < denoise_indel_rate) {
            // stray insertion; usually a stutter of the current token, the
            // shape recognizer insertions typically take
            noisy.push_back(rand_u01(rng) < 0.7
                                ? tok
                                : 1 + rand_int(rng, 0, grammar.vocab_size() - 2));
          }
        }
        if (noisy.empty()) noisy.push_back(chain.front());
        append(noisy);
      }
      append(chain);
      prev = std::move(chain);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

Mat<float> symbol_prototypes(uint64_t proto_seed, int vocab_size, int feat_dim) {
  std::mt19937_64 rng(proto_seed);
  Mat<float> protos = Mat<float>::Zero(vocab_size, feat_dim);
  for (int s = 1; s < vocab_size; ++s) {
    for (int f = 0; f < feat_dim; ++f) protos(s, f) = float(rand_normal(rng));
  }
  return protos;
}

AccentProfile make_accent_profile(int accent_id, const GeneratorConfig& cfg) {
  AccentProfile p;
  p.accent_id = accent_id;
  p.duration_range = {cfg.dur_min, cfg.dur_max};
  p.noise_sigma = cfg.noise_sigma;
  if (accent_id == 0) {
    p.shift_strength = 0.0;
    return p;  // the standard accent: no confusions
  }
  p.shift_strength = accent_id < int(cfg.shift_strengths.size())
                         ? cfg.shift_strengths[accent_id]
                         : cfg.shift_strengths.back();
  // choose 2*k distinct symbols so no source is also a target
  std::mt19937_64 rng(hash_combine(0xacce57, "accent" + std::to_string(accent_id)));
  std::vector<int> pool;
  for (int v = 1; v < cfg.vocab_size; ++v) pool.push_back(v);
  const int need = std::min(2 * cfg.confusions_per_accent, int(pool.size()) / 2 * 2);
  for (int i = 0; i < need; ++i) {
    int j = i + rand_int(rng, 0, int(pool.size()) - 1 - i);
    std::swap(pool[i], pool[j]);
  }
  for (int i = 0; i + 1 < need; i += 2) {
    p.confusion_pairs.emplace_back(pool[i], pool[i + 1]);
  }
  return p;
}

Utterance synthesize_utterance(const std::vector<int>& transcript, const AccentProfile& profile,
                               const Mat<float>& prototypes, uint64_t seed) {
  if (transcript.empty()) throw std::invalid_argument("synthesize_utterance: empty transcript");
  const int F = int(prototypes.cols());
  std::mt19937_64 rng(seed);
  std::vector<Eigen::RowVectorXf> rows;
  for (int s : transcript) {
    if (s <= 0 || s >= prototypes.rows()) {
      throw std::invalid_argument("synthesize_utterance: unknown symbol " + std::to_string(s));
    }
    Eigen::RowVectorXf mean = prototypes.row(s);
    for (const auto& [src, tgt] : profile.confusion_pairs) {
      if (src == s) {
        mean += float(profile.shift_strength) * (prototypes.row(tgt) - prototypes.row(s));
        break;
      }
    }
    const int d = rand_int(rng, profile.duration_range.first, profile.duration_range.second);
    for (int i = 0; i < d; ++i) {
      Eigen::RowVectorXf fr(F);
      for (int f = 0; f < F; ++f) fr(f) = mean(f) + float(profile.noise_sigma * rand_normal(rng));
      rows.push_back(fr);
    }
  }
  Utterance u;
  u.frames.resize(Eigen::Index(rows.size()), F);
  for (size_t i = 0; i < rows.size(); ++i) u.frames.row(Eigen::Index(i)) = rows[i];
  u.transcript = transcript;
  u.accent = profile.accent_id;
  return u;
}

namespace {

json profile_to_json(const AccentProfile& p) {
  json j;
  j["accent_id"] = p.accent_id;
  j["shift_strength"] = p.shift_strength;
  j["noise_sigma"] = p.noise_sigma;
  j["duration_range"] = {p.duration_range.first, p.duration_range.second};
  j["confusion_pairs"] = json::array();
  for (const auto& [a, b] : p.confusion_pairs) j["confusion_pairs"].push_back({a, b});
  return j;
}

AccentProfile profile_from_json(const json& j) {
  AccentProfile p;
  p.accent_id = j.at("accent_id");
  p.shift_strength = j.at("shift_strength");
  p.noise_sigma = j.at("noise_sigma");
  p.duration_range = {j.at("duration_range")[0], j.at("duration_range")[1]};
  for (const auto& pr : j.at("confusion_pairs")) p.confusion_pairs.emplace_back(pr[0], pr[1]);
  return p;
}

void write_split(const GeneratorConfig& cfg, const std::string& out_dir, const std::string& split,
                 int count, const BigramGrammar& grammar,
                 const std::vector<AccentProfile>& profiles, const Mat<float>& protos,
                 DatasetManifest& manifest) {
  const std::string frames_path = out_dir + "/" + split + ".frames.bin";
  const std::string index_path = out_dir + "/" + split + ".frames.idx";
  std::ofstream bin(frames_path, std::ios::binary);
  std::ofstream idx(index_path);
  if (!bin || !idx) throw std::runtime_error("cannot write dataset files under " + out_dir);

  manifest.split = split;
  manifest.count = count;
  manifest.per_accent_counts.assign(cfg.num_accents, 0);
  manifest.frames_path = frames_path;
  manifest.index_path = index_path;

  uint64_t offset = 0;
  for (int i = 0; i < count; ++i) {
    const int accent = i % cfg.num_accents;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%06d", split.c_str(), i);
    const std::string utt_id = buf;
    const uint64_t utt_seed = hash_combine(cfg.seed, utt_id);
    std::mt19937_64 rng(utt_seed);
    std::vector<int> transcript = grammar.sample(rng, {cfg.len_min, cfg.len_max});
    Utterance u = synthesize_utterance(transcript, profiles[accent], protos, utt_seed ^ 0x5bd1);
    u.utt_id = utt_id;

    static_assert(sizeof(float) == 4);
    bin.write(reinterpret_cast<const char*>(u.frames.data()), 4 * u.frames.size());
    idx << utt_id << ' ' << offset << ' ' << u.frames.rows() << ' ' << u.frames.cols() << ' '
        << accent << ' ';
    for (size_t k = 0; k < u.transcript.size(); ++k) {
      if (k) idx << ',';
      idx << u.transcript[k];
    }
    idx << '\n';
    offset += 4 * uint64_t(u.frames.size());
    manifest.per_accent_counts[accent]++;
  }
  if (!bin || !idx) throw std::runtime_error("write failure under " + out_dir);

  json j;
  j["split"] = split;
  j["count"] = count;
  j["per_accent_counts"] = manifest.per_accent_counts;
  j["vocab"] = {{"size", cfg.vocab_size}, {"blank_id", 0}};
  j["accents"] = json::array();
  for (const auto& p : profiles) j["accents"].push_back(profile_to_json(p));
  j["seed"] = cfg.seed;
  j["feat_dim"] = cfg.feat_dim;
  j["frames_path"] = frames_path;
  j["index_path"] = index_path;
  std::ofstream mf(out_dir + "/" + split + ".manifest.json");
  mf << j.dump(2) << '\n';
  if (!mf) throw std::runtime_error("cannot write manifest under " + out_dir);
}

}  // namespace

std::vector<DatasetManifest> generate_corpus(const GeneratorConfig& cfg,
                                             const std::string& out_dir) {
  if (cfg.num_accents < 2) throw std::invalid_argument("generate_corpus: need >= 2 accents");
  fs::create_directories(out_dir);

  const uint64_t grammar_seed = hash_combine(cfg.seed, "grammar");
  const uint64_t proto_seed = hash_combine(cfg.seed, "prototypes");
  BigramGrammar grammar(grammar_seed, cfg.vocab_size);
  Mat<float> protos = symbol_prototypes(proto_seed, cfg.vocab_size, cfg.feat_dim);
  std::vector<AccentProfile> profiles;
  for (int a = 0; a < cfg.num_accents; ++a) profiles.push_back(make_accent_profile(a, cfg));

  std::vector<DatasetManifest> manifests(3);
  const std::string splits[3] = {"train", "dev", "test"};
  const int counts[3] = {cfg.train_utts, cfg.dev_utts, cfg.test_utts};
  for (int i = 0; i < 3; ++i) {
    manifests[i].vocab.size = cfg.vocab_size;
    manifests[i].accents = profiles;
    manifests[i].seed = cfg.seed;
    write_split(cfg, out_dir, splits[i], counts[i], grammar, profiles, protos, manifests[i]);
  }
  return manifests;
}

DatasetManifest load_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open manifest: " + manifest_path);
  json j;
  in >> j;
  DatasetManifest m;
  m.split = j.at("split");
  m.count = j.at("count");
  m.per_accent_counts = j.at("per_accent_counts").get<std::vector<int>>();
  m.vocab.size = j.at("vocab").at("size");
  for (const auto& pj : j.at("accents")) m.accents.push_back(profile_from_json(pj));
  m.seed = j.at("seed");
  m.frames_path = j.at("frames_path");
  m.index_path = j.at("index_path");
  return m;
}

std::vector<Utterance> load_utterances(const DatasetManifest& m) {
  std::ifstream idx(m.index_path);
  std::ifstream bin(m.frames_path, std::ios::binary);
  if (!idx || !bin) throw std::runtime_error("cannot open dataset files for " + m.split);
  std::vector<Utterance> utts;
  std::string line;
  while (std::getline(idx, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Utterance u;
    uint64_t offset = 0;
    long T = 0, F = 0;
    std::string tr;
    ls >> u.utt_id >> offset >> T >> F >> u.accent >> tr;
    u.frames.resize(T, F);
    bin.seekg(std::streamoff(offset));
    bin.read(reinterpret_cast<char*>(u.frames.data()), 4 * T * F);
    if (!bin) throw std::runtime_error("truncated frames archive: " + m.frames_path);
    std::istringstream ts(tr);
    std::string tok;
    while (std::getline(ts, tok, ',')) u.transcript.push_back(std::stoi(tok));
    utts.push_back(std::move(u));
  }
  return utts;
}

uint64_t file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a(buf, size_t(in.gcount()), h);
    if (!in) break;
  }
  return h;
}

}  // namespace mmger
