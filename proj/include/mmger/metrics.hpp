// Edit-distance based character error rate.
#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace mmger {

inline int edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = int(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = int(i);
    for (size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline double cer(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (ref.empty()) throw std::invalid_argument("cer: empty reference");
  return double(edit_distance(hyp, ref)) / double(ref.size());
}

// Corpus-level accumulator: total edits over total reference length.
struct CerAccumulator {
  long long edits = 0;
  long long ref_len = 0;

  void add(const std::vector<int>& hyp, const std::vector<int>& ref) {
    edits += edit_distance(hyp, ref);
    ref_len += (long long)ref.size();
  }
  double value() const { return ref_len == 0 ? 0.0 : double(edits) / double(ref_len); }
};

}  // namespace mmger
