#include <gtest/gtest.h>

#include "seglm/errors.hpp"
#include "seglm/spatial.hpp"
#include "seglm/synthdata.hpp"
#include "seglm/vision_encoder.hpp"
#include "test_util.hpp"

using namespace seglm;
using seglm::testing::grad_rel_error;
using seglm::testing::random_mat;

namespace {

Image random_image(int h, int w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(h, w);
    for (auto& v : img.pixels()) v = u(rng);
    return img;
}

ag::Var probe(const ag::Var& y, std::uint64_t seed = 5) {
    return ag::sum_all(ag::mul(y, ag::constant(random_mat(y.rows(), y.cols(), seed))));
}

}  // namespace

TEST(Spatial, PatchifyMatchesIndexEnumeration) {
    const int H = 16, W = 24, C = 3, p = 8;
    ag::Mat x = random_mat(H * W, C, 1);
    ag::Mat y = ag::apply_map(ag::constant(x), spatial::patchify(H, W, C, p)).value();
    ASSERT_EQ(y.rows(), (H / p) * (W / p));
    ASSERT_EQ(y.cols(), p * p * C);
    for (int gy = 0; gy < H / p; ++gy)
        for (int gx = 0; gx < W / p; ++gx)
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    for (int c = 0; c < C; ++c)
                        ASSERT_EQ(y(gy * (W / p) + gx, (dy * p + dx) * C + c), x((gy * p + dy) * W + gx * p + dx, c));
    EXPECT_THROW(spatial::patchify(12, 16, 3, 8), DataError);
}

TEST(Spatial, Im2ColZeroPads) {
    const int h = 3, w = 4, C = 2;
    ag::Mat x = random_mat(2 * h * w, C, 2);
    ag::Mat y = ag::apply_map(ag::constant(x), spatial::im2col3x3(h, w, C, 2)).value();
    for (int b = 0; b < 2; ++b)
        for (int py = 0; py < h; ++py)
            for (int px = 0; px < w; ++px)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx)
                        for (int c = 0; c < C; ++c) {
                            const int sy = py + ky - 1, sx = px + kx - 1;
                            const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
                            const double want = inside ? x(b * h * w + sy * w + sx, c) : 0.0;
                            ASSERT_EQ(y(b * h * w + py * w + px, (ky * 3 + kx) * C + c), want);
                        }
}

TEST(Spatial, PixelShufflePlacesSubPixels) {
    const int h = 2, w = 3, C = 2;
    ag::Mat x = random_mat(h * w, 4 * C, 3);
    ag::Mat y = ag::apply_map(ag::constant(x), spatial::pixel_shuffle2(h, w, C)).value();
    ASSERT_EQ(y.rows(), 4 * h * w);
    for (int py = 0; py < h; ++py)
        for (int px = 0; px < w; ++px)
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    for (int c = 0; c < C; ++c)
                        ASSERT_EQ(y((2 * py + dy) * 2 * w + 2 * px + dx, c), x(py * w + px, (dy * 2 + dx) * C + c));
}

TEST(Spatial, BilinearUpsampling) {
    const int h = 3, w = 4;
    ag::Mat constant = ag::Mat::Constant(h * w, 2, 0.7);
    ag::Mat up = ag::apply_map(ag::constant(constant), spatial::upsample_bilinear(h, w, 2, 4)).value();
    ASSERT_EQ(up.rows(), 16 * h * w);
    EXPECT_LT((up.array() - 0.7).abs().maxCoeff(), 1e-14);

    ag::Mat x = random_mat(h * w, 1, 4);
    ag::Mat same = ag::apply_map(ag::constant(x), spatial::upsample_bilinear(h, w, 1, 1)).value();
    EXPECT_LT((same - x).cwiseAbs().maxCoeff(), 1e-15);

    // a horizontal ramp stays a ramp in the interior
    ag::Mat ramp(h * w, 1);
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) ramp(y * w + xx, 0) = xx;
    ag::Mat r = ag::apply_map(ag::constant(ramp), spatial::upsample_bilinear(h, w, 1, 2)).value();
    for (int ox = 1; ox < 2 * w - 1; ++ox) EXPECT_NEAR(r(ox, 0), (ox + 0.5) / 2 - 0.5, 1e-12);
}

TEST(Spatial, SinusoidalGrid) {
    ag::Mat pe = spatial::sinusoidal_grid(4, 5, 16);
    ASSERT_EQ(pe.rows(), 20);
    ASSERT_EQ(pe.cols(), 16);
    EXPECT_LE(pe.cwiseAbs().maxCoeff(), 1.0);
    for (int i = 0; i < 20; ++i)
        for (int j = i + 1; j < 20; ++j) EXPECT_GT((pe.row(i) - pe.row(j)).norm(), 1e-6);
    EXPECT_THROW(spatial::sinusoidal_grid(2, 2, 6), UsageError);
}

TEST(Vision, GridShape) {
    ParameterStore store;
    Initializer init(1);
    VisionEncoder enc(VisionConfig{}, store, init);
    synth::Scene scene = synth::generate_scene(0, 1);
    DenseFeatures f = enc.encode(scene.image);
    EXPECT_EQ(f.grid_h, 8);
    EXPECT_EQ(f.grid_w, 8);
    EXPECT_EQ(f.d_vis, 64);
    EXPECT_EQ(f.grid.rows(), 64);
    EXPECT_EQ(f.grid.cols(), 64);
    EXPECT_TRUE(f.grid.allFinite());
    EXPECT_THROW(enc.encode(Image(20, 16)), DataError);
}

TEST(Vision, ZeroImageBiasFreeGivesZeroGrid) {
    ParameterStore store;
    Initializer init(2);
    VisionConfig cfg;
    cfg.bias = false;
    VisionEncoder enc(cfg, store, init);
    Image black(64, 64);
    DenseFeatures f = enc.encode(black);
    EXPECT_EQ(f.grid.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Vision, StemIsPatchLocal) {
    ParameterStore store;
    Initializer init(3);
    VisionEncoder enc(VisionConfig{}, store, init);
    Image a = random_image(32, 32, 4), b = a;
    // modify only patch (1, 2)
    for (int y = 8; y < 16; ++y)
        for (int x = 16; x < 24; ++x) b.at(y, x, 0) = 1.0 - b.at(y, x, 0);
    ag::NoGradGuard ng;
    ag::Mat sa = enc.stem(a).value(), sb = enc.stem(b).value();
    for (int cell = 0; cell < 16; ++cell) {
        const double d = (sa.row(cell) - sb.row(cell)).cwiseAbs().maxCoeff();
        if (cell == 1 * 4 + 2) {
            EXPECT_GT(d, 1e-6);
        } else {
            EXPECT_EQ(d, 0.0) << cell;
        }
    }
    // deeper layers mix neighbours
    ag::Mat fa = enc.forward(a).value(), fb = enc.forward(b).value();
    EXPECT_GT((fa.row(1 * 4 + 1) - fb.row(1 * 4 + 1)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Vision, Deterministic) {
    ParameterStore s1, s2;
    Initializer i1(7), i2(7);
    VisionEncoder e1(VisionConfig{}, s1, i1), e2(VisionConfig{}, s2, i2);
    Image img = random_image(64, 64, 9);
    EXPECT_EQ(e1.encode(img).grid, e2.encode(img).grid);
    EXPECT_EQ(e1.encode(img).grid, e1.encode(img).grid);
}

TEST(Vision, GradientCheck) {
    ParameterStore store;
    Initializer init(11);
    VisionConfig cfg;
    cfg.d_vis = 16;
    cfg.n_blocks = 2;
    VisionEncoder enc(cfg, store, init);
    Image img = random_image(16, 16, 12);
    auto loss = [&] { return probe(enc.forward(img)); };
    for (const auto& p : store.all()) EXPECT_LT(grad_rel_error(loss, p.var), 1e-4) << p.name;
}

TEST(Vision, PatchEmbedIdentityProjection) {
    ParameterStore store;
    Initializer init(13);
    VisionEncoder enc(VisionConfig{}, store, init);
    Linear identity{ag::parameter(ag::Mat::Identity(64, 64)), ag::parameter(ag::Mat::Zero(1, 64)), std::nullopt};
    Image img = random_image(64, 64, 14);
    DenseFeatures f = enc.encode(img);
    ag::Mat seq = patch_embed_for_lm(ag::constant(f.grid), identity).value();
    ASSERT_EQ(seq.rows(), 64);
    EXPECT_EQ(seq, f.grid);
    // row r of the sequence is grid cell (r / 8, r % 8)
    for (int r = 0; r < 64; ++r) {
        for (int c = 0; c < 64; ++c) ASSERT_EQ(seq(r, c), f.cell(r / 8, r % 8)[c]);
    }
}
