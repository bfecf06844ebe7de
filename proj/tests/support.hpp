#ifndef MTLAM_TESTS_SUPPORT_HPP_
#define MTLAM_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mtlam/loss.hpp"
#include "mtlam/tasks.hpp"

namespace mtlam::fixtures {

// Scalar reference for the weighted masked BCE, written with plain loops and
// its own task table so it shares no code path with the vectorized loss.
struct OracleBatch {
  std::vector<int> row_type;                       // 0 IAC, 1 IBM, 2 propaganda
  std::vector<std::array<double, 10>> probability;
  std::vector<std::array<int, 10>> label;
  std::vector<std::array<int, 10>> mask;
};

// Task -> type, written out independently of the registry.
inline constexpr std::array<int, 10> kOracleTaskType = {2, 0, 0, 0, 0, 0, 0, 0, 0, 1};

inline double oracle_loss(const OracleBatch& b, const std::array<double, 3>& nu,
                          const std::array<std::array<double, 2>, 10>& w) {
  const double eps = 1e-7;
  double total = 0;
  for (int k = 0; k < 3; ++k) {
    int tasks_in_type = 0;
    for (int t = 0; t < 10; ++t) tasks_in_type += kOracleTaskType[t] == k;
    int rows_in_type = 0;
    for (int r : b.row_type) rows_in_type += r == k;
    if (rows_in_type == 0) continue;
    double type_sum = 0;
    for (std::size_t j = 0; j < b.row_type.size(); ++j) {
      if (b.row_type[j] != k) continue;
      for (int t = 0; t < 10; ++t) {
        if (kOracleTaskType[t] != k || b.mask[j][t] == 0) continue;
        double p = b.probability[j][t];
        if (p < eps) p = eps;
        if (p > 1 - eps) p = 1 - eps;
        const int y = b.label[j][t];
        const double bce = y == 1 ? -std::log(p) : -std::log(1 - p);
        type_sum += w[t][y] * bce;
      }
    }
    total += nu[k] * type_sum / (tasks_in_type * static_cast<double>(rows_in_type));
  }
  return total;
}

inline Matrix to_matrix(const std::vector<std::array<double, 10>>& rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), 10);
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (int t = 0; t < 10; ++t) m(static_cast<Eigen::Index>(j), t) = rows[j][t];
  return m;
}

inline Matrix to_matrix(const std::vector<std::array<int, 10>>& rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), 10);
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (int t = 0; t < 10; ++t) m(static_cast<Eigen::Index>(j), t) = rows[j][t];
  return m;
}

// Random batch of up to `max_rows` rows with mixed types, partial masks (at
// least one label per row) and probabilities that occasionally hit the clip.
inline OracleBatch random_batch(std::mt19937_64& rng, std::size_t max_rows = 64) {
  std::uniform_int_distribution<std::size_t> rows_dist(1, max_rows);
  std::uniform_int_distribution<int> type_dist(0, 2), bit(0, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  OracleBatch b;
  const std::size_t n = rows_dist(rng);
  for (std::size_t j = 0; j < n; ++j) {
    const int k = type_dist(rng);
    std::array<double, 10> p{};
    std::array<int, 10> y{}, m{};
    std::vector<int> own;
    for (int t = 0; t < 10; ++t) {
      const double r = u(rng);
      p[t] = r < 0.02 ? 0.0 : r > 0.98 ? 1.0 : u(rng);
      y[t] = bit(rng);
      if (kOracleTaskType[t] == k) {
        own.push_back(t);
        m[t] = bit(rng);
      }
    }
    if (std::none_of(own.begin(), own.end(), [&](int t) { return m[t] == 1; })) {
      m[own[std::uniform_int_distribution<std::size_t>(0, own.size() - 1)(rng)]] = 1;
    }
    b.row_type.push_back(k);
    b.probability.push_back(p);
    b.label.push_back(y);
    b.mask.push_back(m);
  }
  return b;
}

inline LossWeights random_weights(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 3.0);
  LossWeights w;
  for (auto& v : w.type_weights) v = u(rng);
  for (auto& c : w.class_weights) c = {u(rng), u(rng)};
  return w;
}

inline std::array<std::array<double, 2>, 10> class_array(const LossWeights& w) {
  std::array<std::array<double, 2>, 10> out{};
  for (int t = 0; t < 10; ++t) out[t] = w.class_weights[t];
  return out;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mtlam-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace mtlam::fixtures

#endif  // MTLAM_TESTS_SUPPORT_HPP_
