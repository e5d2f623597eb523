#pragma once

#include "mvs/dataset.hpp"
#include "mvs/image.hpp"
#include "mvs/random.hpp"

#include <filesystem>
#include <memory>
#include <random>
#include <string>

namespace mvs::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& stem) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (stem + "-" + std::to_string(rd()) + std::to_string(rd()));
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

inline Image random_image(Eigen::Index h, Eigen::Index w, Rng& rng) {
  Image img(h, w);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (auto& c : img.channels)
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
  return img;
}

inline ImageRef shared(Image img) { return std::make_shared<const Image>(std::move(img)); }

}  // namespace mvs::test
