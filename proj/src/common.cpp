#include "chemflow/common.hpp"

namespace chemflow {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng make_rng(std::uint64_t seed, std::uint64_t stream) { return Rng(mix_seed(seed, stream)); }

Vec standard_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

Mat standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat m(rows, cols);
  // column-major fill keeps column j identical to standard_normal(rng, rows)
  // drawn in sequence
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

bool all_finite(const Mat& m) { return m.allFinite(); }

std::string version_string() { return std::string("chemflow ") + CHEMFLOW_VERSION; }

}  // namespace chemflow
