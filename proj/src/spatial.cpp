#include "seglm/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "seglm/errors.hpp"

namespace seglm::spatial {

namespace {

// Collects entries in output order (row-major over out_rows × out_cols).
class MapBuilder {
  public:
    MapBuilder(Eigen::Index in_rows, Eigen::Index in_cols, Eigen::Index out_rows, Eigen::Index out_cols) {
        m_.in_rows = in_rows;
        m_.in_cols = in_cols;
        m_.out_rows = out_rows;
        m_.out_cols = out_cols;
        m_.offsets.reserve(static_cast<std::size_t>(out_rows * out_cols + 1));
        m_.offsets.push_back(0);
    }
    void add(Eigen::Index row, Eigen::Index col, double w) {
        m_.sources.push_back(static_cast<int>(row * m_.in_cols + col));
        m_.weights.push_back(w);
    }
    void next() { m_.offsets.push_back(static_cast<int>(m_.sources.size())); }
    MapPtr finish() {
        if (m_.offsets.size() != static_cast<std::size_t>(m_.out_rows * m_.out_cols + 1)) {
            throw std::logic_error("incomplete sparse map");
        }
        return std::make_shared<const ag::SparseMap>(std::move(m_));
    }

  private:
    ag::SparseMap m_;
};

}  // namespace

MapPtr patchify(int height, int width, int channels, int patch) {
    if (patch < 1 || height % patch != 0 || width % patch != 0) {
        throw DataError("image " + std::to_string(height) + "x" + std::to_string(width) +
                        " not divisible by patch size " + std::to_string(patch));
    }
    const int gh = height / patch, gw = width / patch;
    MapBuilder b(Eigen::Index(height) * width, channels, Eigen::Index(gh) * gw, Eigen::Index(patch) * patch * channels);
    for (int gy = 0; gy < gh; ++gy) {
        for (int gx = 0; gx < gw; ++gx) {
            for (int dy = 0; dy < patch; ++dy) {
                for (int dx = 0; dx < patch; ++dx) {
                    const Eigen::Index src_row = Eigen::Index(gy * patch + dy) * width + gx * patch + dx;
                    for (int c = 0; c < channels; ++c) {
                        b.add(src_row, c, 1.0);
                        b.next();
                    }
                }
            }
        }
    }
    return b.finish();
}

MapPtr im2col3x3(int height, int width, int channels, int batch) {
    const Eigen::Index plane = Eigen::Index(height) * width;
    MapBuilder b(plane * batch, channels, plane * batch, 9 * channels);
    for (int n = 0; n < batch; ++n) {
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const int sy = y + ky - 1, sx = x + kx - 1;
                        const bool inside = sy >= 0 && sy < height && sx >= 0 && sx < width;
                        for (int c = 0; c < channels; ++c) {
                            if (inside) b.add(n * plane + Eigen::Index(sy) * width + sx, c, 1.0);
                            b.next();
                        }
                    }
                }
            }
        }
    }
    return b.finish();
}

MapPtr pixel_shuffle2(int height, int width, int channels, int batch) {
    const Eigen::Index in_plane = Eigen::Index(height) * width;
    const int oh = 2 * height, ow = 2 * width;
    const Eigen::Index out_plane = Eigen::Index(oh) * ow;
    MapBuilder b(in_plane * batch, 4 * channels, out_plane * batch, channels);
    for (int n = 0; n < batch; ++n) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const Eigen::Index src_row = n * in_plane + Eigen::Index(y / 2) * width + x / 2;
                const int sub = (y % 2) * 2 + (x % 2);
                for (int c = 0; c < channels; ++c) {
                    b.add(src_row, sub * channels + c, 1.0);
                    b.next();
                }
            }
        }
    }
    return b.finish();
}

MapPtr upsample_bilinear(int height, int width, int channels, int factor, int batch) {
    if (factor < 1) throw UsageError("upsampling factor must be positive");
    const int oh = height * factor, ow = width * factor;
    const Eigen::Index in_plane = Eigen::Index(height) * width;
    // 1-D taps: (index, weight) pairs per output coordinate.
    auto taps = [factor](int n_in, int n_out) {
        std::vector<std::vector<std::pair<int, double>>> t(static_cast<std::size_t>(n_out));
        for (int o = 0; o < n_out; ++o) {
            double src = (o + 0.5) / factor - 0.5;
            src = std::max(src, 0.0);
            int i0 = static_cast<int>(std::floor(src));
            i0 = std::min(i0, n_in - 1);
            const int i1 = std::min(i0 + 1, n_in - 1);
            const double w1 = src - i0;
            auto& v = t[static_cast<std::size_t>(o)];
            if (i1 == i0 || w1 == 0.0) {
                v.push_back({i0, 1.0});
            } else {
                v.push_back({i0, 1.0 - w1});
                v.push_back({i1, w1});
            }
        }
        return t;
    };
    const auto ty = taps(height, oh);
    const auto tx = taps(width, ow);
    MapBuilder b(in_plane * batch, channels, Eigen::Index(oh) * ow * batch, channels);
    for (int n = 0; n < batch; ++n) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                for (int c = 0; c < channels; ++c) {
                    for (auto [sy, wy] : ty[static_cast<std::size_t>(y)]) {
                        for (auto [sx, wx] : tx[static_cast<std::size_t>(x)]) {
                            b.add(n * in_plane + Eigen::Index(sy) * width + sx, c, wy * wx);
                        }
                    }
                    b.next();
                }
            }
        }
    }
    return b.finish();
}

ag::Mat sinusoidal_grid(int height, int width, int dim) {
    if (dim % 4 != 0) throw UsageError("position code width must be divisible by 4");
    const int quarter = dim / 4;
    ag::Mat pe(Eigen::Index(height) * width, dim);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const Eigen::Index r = Eigen::Index(y) * width + x;
            // normalized cell centres in [0, 1)
            const double py = (y + 0.5) / height, px = (x + 0.5) / width;
            for (int k = 0; k < quarter; ++k) {
                const double freq = std::pow(100.0, double(k) / quarter) * M_PI;
                pe(r, k) = std::sin(px * freq);
                pe(r, quarter + k) = std::cos(px * freq);
                pe(r, 2 * quarter + k) = std::sin(py * freq);
                pe(r, 3 * quarter + k) = std::cos(py * freq);
            }
        }
    }
    return pe;
}

}  // namespace seglm::spatial
