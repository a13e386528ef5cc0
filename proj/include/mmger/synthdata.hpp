// Seeded synthetic accented-speech corpus. Accents shift the per-symbol
// frame prototypes toward a confusion target, so recognition errors are
// systematic and correctable. File format: flat f32 LE frames archive,
// plain-text sidecar index, JSON manifest.
#pragma once

#include "mmger/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace mmger {

struct SymbolVocab {
  int size = 24;  // symbol ids 0..size-1; id 0 is the CTC blank
  int blank_id = 0;

  // LM-side ids appended after the symbols.
  int eos_id() const { return size; }
  int pad_id() const { return size + 1; }
  int lm_vocab_size() const { return size + 2; }
};

struct AccentProfile {
  int accent_id = 0;
  std::vector<std::pair<int, int>> confusion_pairs;  // (source, target) symbols
  double shift_strength = 0.0;                       // alpha in [0,1]
  std::pair<int, int> duration_range = {2, 4};       // frames per symbol
  double noise_sigma = 0.3;
};

struct Utterance {
  Mat<float> frames;            // T x F
  std::vector<int> transcript;  // blank-free symbol ids
  int accent = 0;
  std::string utt_id;
};

struct GeneratorConfig {
  int vocab_size = 24;
  int feat_dim = 16;
  int num_accents = 4;
  std::vector<double> shift_strengths = {0.0, 0.4, 0.6, 0.8};
  int confusions_per_accent = 4;
  double noise_sigma = 0.3;
  int dur_min = 2, dur_max = 4;
  int len_min = 3, len_max = 12;
  int train_utts = 2000, dev_utts = 400, test_utts = 400;
  uint64_t seed = 1234;
};

struct DatasetManifest {
  std::string split;
  int count = 0;
  std::vector<int> per_accent_counts;
  SymbolVocab vocab;
  std::vector<AccentProfile> accents;
  uint64_t seed = 0;
  std::string frames_path;
  std::string index_path;
};

// Deterministic scalar draws (pinned here rather than relying on the
// stdlib's unspecified distribution algorithms).
inline double rand_u01(std::mt19937_64& rng) {
  return double(rng() >> 11) * (1.0 / 9007199254740992.0);
}
inline int rand_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + int(rng() % uint64_t(hi - lo + 1));
}
inline double rand_normal(std::mt19937_64& rng) {
  double u1 = rand_u01(rng), u2 = rand_u01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Sparse bigram Markov chain over the non-blank symbols.
class BigramGrammar {
 public:
  BigramGrammar(uint64_t grammar_seed, int vocab_size, int branching = 6);

  // Length drawn uniformly from [range.first, range.second].
  std::vector<int> sample(std::mt19937_64& rng, std::pair<int, int> length_range) const;

  bool allowed(int from, int to) const;
  int vocab_size() const { return vocab_size_; }

 private:
  int vocab_size_;
  std::vector<std::vector<int>> successors_;      // per source symbol
  std::vector<std::vector<double>> cumulative_;   // matching cumulative probs
};

// Spec-level op: fully determined by (grammar_seed, length_range).
std::vector<int> sample_transcript(uint64_t grammar_seed, std::pair<int, int> length_range,
                                   int vocab_size = 24);

// LM pretraining text: each sequence is an eos-separated run of grammar
// chains, where a chain sometimes repeats its predecessor verbatim. The
// repeats give the language model a copy mechanism it can reuse when a
// prompt asks it to echo a hypothesis, and the run lengths cover the
// position range the correction prompts occupy. With probability
// `denoise_prob` a fresh chain is preceded by a corrupted rendition of
// itself (uniform substitutions at `denoise_sub_rate`, dropped tokens and
// mostly-stutter insertions at `denoise_indel_rate`, adjacent repeated
// symbols collapsed into one with `denoise_merge_prob`), so the model
// also learns to clean up a recognizer-style errorful draft rather than
// echo it verbatim.
std::vector<std::vector<int>> build_pretrain_text(const BigramGrammar& grammar,
                                                  std::mt19937_64& rng, int num_sequences,
                                                  std::pair<int, int> chain_len_range, int eos_id,
                                                  int min_total_len = 10, int max_total_len = 80,
                                                  double repeat_prob = 0.6,
                                                  double denoise_prob = 0.0,
                                                  double denoise_sub_rate = 0.15,
                                                  double denoise_indel_rate = 0.0,
                                                  double denoise_merge_prob = 0.0);

// Per-symbol frame prototypes, fixed by the vocab seed. Row s is mu_s
// (row 0, the blank, is all zero and never emitted).
Mat<float> symbol_prototypes(uint64_t proto_seed, int vocab_size, int feat_dim);

AccentProfile make_accent_profile(int accent_id, const GeneratorConfig& cfg);

Utterance synthesize_utterance(const std::vector<int>& transcript, const AccentProfile& profile,
                               const Mat<float>& prototypes, uint64_t seed);

// Writes frames.bin / frames.idx / manifest.json per split under out_dir.
// Returns the train/dev/test manifests in that order.
std::vector<DatasetManifest> generate_corpus(const GeneratorConfig& cfg, const std::string& out_dir);

DatasetManifest load_manifest(const std::string& manifest_path);
std::vector<Utterance> load_utterances(const DatasetManifest& m);

uint64_t file_checksum(const std::string& path);

}  // namespace mmger
