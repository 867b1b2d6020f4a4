#ifndef GALLOP_TESTS_SUPPORT_HPP
#define GALLOP_TESTS_SUPPORT_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gallop/feature_store.hpp"
#include "gallop/matrix.hpp"

namespace gallop::testing {

inline std::vector<double> random_unit(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  double s = 0.0;
  for (auto& x : v) {
    x = n(rng);
    s += x * x;
  }
  s = std::sqrt(s);
  for (auto& x : v) x /= s;
  return v;
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (auto& x : m.flat()) x = n(rng);
  return m;
}

// Unit global feature, unit local rows, uniform label.
inline FeatureRecord random_record(std::mt19937_64& rng, std::size_t d, std::size_t L, std::uint32_t classes) {
  FeatureRecord r;
  r.label = static_cast<std::uint32_t>(rng() % classes);
  auto g = random_unit(rng, d);
  r.global.assign(g.begin(), g.end());
  // float rounding can leave the norm a hair off 1; renormalize in float
  double s = 0.0;
  for (float x : r.global) s += double(x) * x;
  for (auto& x : r.global) x = static_cast<float>(x / std::sqrt(s));
  for (std::size_t i = 0; i < L; ++i) {
    auto row = random_unit(rng, d);
    r.locals.insert(r.locals.end(), row.begin(), row.end());
  }
  return r;
}

inline FeatureDataset random_dataset(std::uint64_t seed, std::size_t n, std::uint32_t d, std::uint32_t L,
                                     std::uint32_t classes) {
  std::mt19937_64 rng(seed);
  FeatureDataset ds;
  ds.num_classes = classes;
  ds.d = d;
  ds.L = L;
  for (std::uint32_t c = 0; c < classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));
  for (std::size_t i = 0; i < n; ++i) ds.records.push_back(random_record(rng, d, L, classes));
  return ds;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("gallop_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace gallop::testing

#endif  // GALLOP_TESTS_SUPPORT_HPP
