#pragma once

// Brute-force reference computations shared by the unit tests and the
// acceptance run. Written without the library's sweep or recursion code.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "vad/eval.hpp"

namespace oracle {

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// (1 - L)^d x by direct binomial expansion.
inline std::vector<double> expand(const std::vector<double>& x, int d) {
  std::vector<double> out;
  for (std::size_t k = 0; k + static_cast<std::size_t>(d) < x.size(); ++k) {
    double v = 0.0;
    for (int j = 0; j <= d; ++j) {
      v += (j % 2 ? -1.0 : 1.0) * binomial(d, j) * x[k + static_cast<std::size_t>(d - j)];
    }
    out.push_back(v);
  }
  return out;
}

// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& l) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!l[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j]) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

// Error rates of "score > t" at t = -inf and every distinct score, ascending.
inline std::vector<vad::eval::ErrorRates> enumerate(const std::vector<double>& s,
                                                    const std::vector<std::uint8_t>& l) {
  std::vector<double> ts{-std::numeric_limits<double>::infinity()};
  ts.insert(ts.end(), s.begin(), s.end());
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  std::vector<vad::eval::ErrorRates> out;
  for (double t : ts) {
    double fp = 0, fn = 0, np = 0, nn = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (l[i]) {
        ++np;
        fn += s[i] > t ? 0 : 1;
      } else {
        ++nn;
        fp += s[i] > t ? 1 : 0;
      }
    }
    out.push_back({fp / nn, fn / np});
  }
  return out;
}

// First crossing of FPR (falling) and FNR (rising), interpolated; otherwise
// the smallest max(FPR, FNR).
inline double crossing(const std::vector<vad::eval::ErrorRates>& r) {
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double g = r[i].fpr - r[i].fnr;
    if (g == 0.0) return r[i].fpr;
    if (i > 0) {
      const double g0 = r[i - 1].fpr - r[i - 1].fnr;
      if (g0 > 0.0 && g < 0.0) {
        const double w = g0 / (g0 - g);
        return r[i - 1].fpr + w * (r[i].fpr - r[i - 1].fpr);
      }
    }
  }
  double best = 1.0;
  for (const auto& e : r) best = std::min(best, std::max(e.fpr, e.fnr));
  return best;
}

}  // namespace oracle
