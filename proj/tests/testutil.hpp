#pragma once

#include "tsdl/matrix.hpp"

#include <random>
#include <vector>

namespace testutil {

inline tsdl::Matrix randm(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  tsdl::Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

inline tsdl::Matrix rand_spd(std::mt19937_64& rng, int n) {
  tsdl::Matrix r = randm(rng, n, n);
  tsdl::Matrix g = tsdl::matmul(tsdl::transpose(r), r);
  for (int i = 0; i < n; ++i) g(i, i) += 1.0;
  return g;
}

// max_ij |got - want| scaled by 1 + max|want|; the mixed absolute/relative
// error used throughout for gradient and oracle comparisons.
inline double rel_gap(const tsdl::Matrix& got, const tsdl::Matrix& want) {
  if (got.rows() != want.rows() || got.cols() != want.cols()) return 1e300;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num = std::max(num, std::abs(got.data()[i] - want.data()[i]));
    den = std::max(den, std::abs(want.data()[i]));
  }
  return num / (1.0 + den);
}

inline double rel_gap(const std::vector<tsdl::Matrix>& got,
                      const std::vector<tsdl::Matrix>& want) {
  if (got.size() != want.size()) return 1e300;
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (got[i].empty() && want[i].empty()) continue;
    worst = std::max(worst, rel_gap(got[i], want[i]));
  }
  return worst;
}

inline tsdl::Matrix naive_matmul(const tsdl::Matrix& a, const tsdl::Matrix& b) {
  tsdl::Matrix out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int k = 0; k < a.cols(); ++k)
      for (int j = 0; j < b.cols(); ++j) out(i, j) += a(i, k) * b(k, j);
  return out;
}

inline tsdl::Matrix onehot_labels(std::mt19937_64& rng, int classes, int n) {
  tsdl::Matrix lab(classes, n);
  for (int c = 0; c < n; ++c) lab(int(rng() % std::uint64_t(classes)), c) = 1.0;
  return lab;
}

}  // namespace testutil
