#pragma once

// Shared helpers for the test suites: independent brute-force oracles for
// the metrics and the miner, finite-difference utilities, and a temp-dir
// guard. Everything here stays independent of the library code paths it
// checks (the oracles recompute definitions from scratch).

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "casdc/dataset.hpp"
#include "casdc/embedding.hpp"
#include "casdc/evaluation.hpp"
#include "casdc/rng.hpp"

namespace casdc_test {

using casdc::EvalRecord;
using casdc::Matrix;
using casdc::MiningStrategy;
using casdc::Role;
using casdc::Triplet;

struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("casdc_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

// O(n^2) pairwise AUROC: P(known > unknown) + 0.5 P(tie).
inline double auroc_pairwise(const std::vector<EvalRecord>& records) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (const EvalRecord& k : records) {
    if (!k.is_known) continue;
    for (const EvalRecord& u : records) {
      if (u.is_known) continue;
      ++pairs;
      if (k.score > u.score)
        wins += 1.0;
      else if (k.score == u.score)
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Threshold-sweep CCR oracle: candidates are 0 and every known score; the
// threshold is the largest candidate keeping the accepted fraction of
// knowns at or above the target, and CCR counts correct accepted knowns
// over all knowns.
inline double ccr_bruteforce(const std::vector<EvalRecord>& records,
                             double target_tpr) {
  std::vector<double> known_scores;
  for (const EvalRecord& r : records)
    if (r.is_known) known_scores.push_back(r.score);
  const double n = static_cast<double>(known_scores.size());

  std::vector<double> candidates = known_scores;
  candidates.push_back(0.0);
  std::sort(candidates.begin(), candidates.end());

  double tau = 0.0;
  for (double c : candidates) {
    std::size_t accepted = 0;
    for (double s : known_scores)
      if (s > c) ++accepted;
    if (static_cast<double>(accepted) / n >= target_tpr) tau = c;
  }

  std::size_t correct = 0;
  for (const EvalRecord& r : records)
    if (r.is_known && r.score > tau && *r.predicted_class == *r.true_class)
      ++correct;
  return static_cast<double>(correct) / n;
}

// Exhaustive triple enumeration mirroring the miner's documented rules:
// positives re-derived independently (hardest for the hard strategy, the
// documented seeded draw for semihard), negatives filtered by band over all
// candidates.
inline std::vector<Triplet> mine_bruteforce(const Matrix& embeddings,
                                            const std::vector<Role>& roles,
                                            MiningStrategy strategy,
                                            double margin, std::uint64_t seed) {
  std::vector<int> kk, ku;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == Role::KK) kk.push_back(static_cast<int>(i));
    if (roles[i] == Role::KU) ku.push_back(static_cast<int>(i));
  }
  auto d2 = [&](int a, int b) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < embeddings.cols(); ++c) {
      const double diff = embeddings(a, c) - embeddings(b, c);
      s += diff * diff;
    }
    return s;
  };

  auto pass = [&](bool hard_band, bool random_positive) {
    casdc::Rng rng(seed);
    std::vector<Triplet> out;
    for (int a : kk) {
      std::vector<int> others;
      for (int p : kk)
        if (p != a) others.push_back(p);
      int pos;
      if (random_positive) {
        pos = others[static_cast<std::size_t>(
            rng.below(static_cast<std::uint64_t>(others.size())))];
      } else {
        pos = others.front();
        for (int p : others)
          if (d2(a, p) > d2(a, pos)) pos = p;
      }
      const double dp = d2(a, pos);
      for (int n : ku) {
        const double dn = d2(a, n);
        const bool ok = hard_band ? (dn < dp) : (dp <= dn && dn < dp + margin);
        if (ok) out.push_back({a, pos, n});
      }
    }
    return out;
  };

  switch (strategy) {
    case MiningStrategy::hard:
      return pass(true, false);
    case MiningStrategy::semihard:
      return pass(false, true);
    case MiningStrategy::combined: {
      std::vector<Triplet> out = pass(true, false);
      const std::vector<Triplet> semi = pass(false, true);
      out.insert(out.end(), semi.begin(), semi.end());
      return out;
    }
  }
  return {};
}

inline bool same_triplet_set(std::vector<Triplet> a, std::vector<Triplet> b) {
  auto key = [](const Triplet& t) {
    return std::tuple<int, int, int>(t.anchor, t.positive, t.negative);
  };
  auto cmp = [&](const Triplet& x, const Triplet& y) { return key(x) < key(y); };
  std::sort(a.begin(), a.end(), cmp);
  std::sort(b.begin(), b.end(), cmp);
  return a == b;
}

// Random records with optional tie injection; scores positive so the
// threshold conventions stay in their main regime.
inline std::vector<EvalRecord> random_records(std::mt19937_64& gen,
                                              std::size_t n, bool inject_ties) {
  std::uniform_real_distribution<double> unif(0.05, 10.0);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> cls(1, 4);
  std::vector<EvalRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    EvalRecord& r = records[i];
    r.score = inject_ties && coin(gen) ? std::round(unif(gen)) : unif(gen);
    r.is_known = coin(gen) == 1;
    if (i == 0) r.is_known = true;   // guarantee both classes present
    if (i == 1) r.is_known = false;
    if (r.is_known) {
      r.true_class = cls(gen);
      r.predicted_class = coin(gen) ? r.true_class : cls(gen);
    } else {
      r.predicted_class = cls(gen);
    }
  }
  return records;
}

// Central finite difference of a scalar function w.r.t. one coordinate that
// the caller perturbs through the lambda.
template <class F>
double central_diff(F&& eval_at, double eps) {
  const double lp = eval_at(eps);
  const double lm = eval_at(-eps);
  return (lp - lm) / (2.0 * eps);
}

inline double rel_error(double a, double b) {
  const double denom = std::max(std::abs(a), std::abs(b));
  if (denom < 1e-12) return 0.0;
  return std::abs(a - b) / denom;
}

}  // namespace casdc_test
