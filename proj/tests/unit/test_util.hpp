#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>
#include <functional>
#include <random>
#include <vector>

#include <unistd.h>

#include "seglm/autograd.hpp"
#include "seglm/datamodel.hpp"

namespace seglm::testing {

inline ag::Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    ag::Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
    return m;
}

inline BinaryMask random_mask(int h, int w, std::uint64_t seed, double p = 0.3) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution d(p);
    BinaryMask m(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) m.at(y, x) = d(rng) ? 1 : 0;
    }
    return m;
}

/// Relative L2 error ‖a − n‖ / sqrt(‖a‖² + ‖n‖²) between the backward-pass
/// gradient of one leaf and central differences. At most `max_entries` coordinates are probed
/// (evenly strided) to bound the cost on large tensors.
inline double grad_rel_error(const std::function<ag::Var()>& loss, ag::Var leaf, double h = 1e-5,
                             Eigen::Index max_entries = 64, double floor = 1e-10) {
    leaf.zero_grad();
    ag::Var l = loss();
    ag::backward(l);
    ag::Mat analytic = leaf.grad();
    if (analytic.size() == 0) analytic = ag::Mat::Zero(leaf.rows(), leaf.cols());
    leaf.zero_grad();

    const Eigen::Index n = leaf.value().size();
    const Eigen::Index stride = std::max<Eigen::Index>(1, n / max_entries);
    double diff = 0.0, norm = 0.0;
    for (Eigen::Index i = 0; i < n; i += stride) {
        double& x = leaf.mutable_value().data()[i];
        const double saved = x;
        x = saved + h;
        const double up = loss().item();
        x = saved - h;
        const double down = loss().item();
        x = saved;
        const double numeric = (up - down) / (2 * h);
        const double a = analytic.data()[i];
        diff += (a - numeric) * (a - numeric);
        norm += a * a + numeric * numeric;
    }
    return std::sqrt(diff) / std::max(std::sqrt(norm), floor);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("seglm_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

  private:
    std::filesystem::path path_;
};

}  // namespace seglm::testing
