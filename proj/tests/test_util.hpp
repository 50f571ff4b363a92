#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "hds/rng.hpp"
#include "hds/tensor.hpp"

namespace hds::test {

inline Tensor<double> random_tensor(Shape shape, RngState& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values()[i] = scale * rng.normal();
  return t;
}

inline double dot(const Vec<double>& a, const Vec<double>& b) { return (a * b).sum(); }

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& stem) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (stem + "_" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
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

}  // namespace hds::test
