#include <gtest/gtest.h>

#include <cmath>

#include "seglm/errors.hpp"
#include "seglm/losses.hpp"
#include "test_util.hpp"

using namespace seglm;
using seglm::testing::grad_rel_error;
using seglm::testing::random_mask;
using seglm::testing::random_mat;

namespace {

ag::Var column(const ag::Mat& m) {
    ag::Mat c = m;
    c.resize(m.size(), 1);
    return ag::constant(c);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(TextCE, UniformLogits) {
    const std::vector<int> targets{3, 17, 200};
    const std::vector<std::uint8_t> include{1, 1, 1};
    ag::Var logits = ag::constant(ag::Mat::Zero(3, 201));
    EXPECT_NEAR(text_ce(logits, targets, include).item(), std::log(201.0), 1e-12);
    EXPECT_NEAR(std::log(201.0), 5.3033, 1e-4);
}

TEST(TextCE, ConfidentCorrectLogits) {
    ag::Mat l = ag::Mat::Zero(2, 10);
    l(0, 4) = 50;
    l(1, 7) = 50;
    const std::vector<int> targets{4, 7};
    const std::vector<std::uint8_t> include{1, 1};
    EXPECT_LT(text_ce(ag::constant(l), targets, include).item(), 1e-9);
}

TEST(TextCE, HandComputedSpanWithPadAndExclusions) {
    ag::Mat l{{0.5, 1.5, -0.5}, {2.0, 0.0, 1.0}, {0.1, 0.2, 0.3}, {1.0, 1.0, 4.0}, {0.0, 3.0, 0.0}};
    const std::vector<int> targets{2, 0, 1, 0, 1};
    const std::vector<std::uint8_t> include{0, 1, 1, 1, 1};  // row 0 is a prompt row
    const int pad = 0;  // rows 1 and 3 target PAD
    double want = 0.0;
    for (int r : {2, 4}) {
        double z = 0;
        for (int c = 0; c < 3; ++c) z += std::exp(l(r, c));
        want += std::log(z) - l(r, targets[static_cast<std::size_t>(r)]);
    }
    want /= 2;
    EXPECT_NEAR(text_ce(ag::constant(l), targets, include, pad).item(), want, 1e-9);
    const std::vector<std::uint8_t> none{0, 0, 0, 0, 0};
    EXPECT_THROW(text_ce(ag::constant(l), targets, none), UsageError);
}

TEST(MaskLosses, BceAnalyticCases) {
    BinaryMask m = random_mask(8, 8, 1);
    EXPECT_NEAR(bce_loss(ag::constant(ag::Mat::Zero(64, 1)), m).item(), std::log(2.0), 1e-12);
    ag::Mat sharp(64, 1);
    for (int i = 0; i < 64; ++i) sharp(i, 0) = m.bits()[static_cast<std::size_t>(i)] ? 50.0 : -50.0;
    EXPECT_LT(bce_loss(ag::constant(sharp), m).item(), 1e-9);
    EXPECT_LT(dice_loss(ag::constant(sharp), m).item(), 1e-6);
}

TEST(MaskLosses, TwoByTwoHandCase) {
    BinaryMask m(2, 2);
    m.at(0, 1) = 1;
    m.at(1, 1) = 1;
    ag::Mat l{{0.3, -1.2}, {2.0, 0.7}};
    double bce = 0, inter = 0, sp = 0;
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) {
            const double p = sigmoid(l(y, x)), t = m.at(y, x);
            bce += -(t * std::log(p) + (1 - t) * std::log(1 - p));
            inter += p * t;
            sp += p;
        }
    EXPECT_NEAR(bce_loss(column(l), m).item(), bce / 4, 1e-9);
    EXPECT_NEAR(dice_loss(column(l), m).item(), 1 - (2 * inter + 1) / (sp + 2 + 1), 1e-9);
}

TEST(MaskLosses, DiceLimits) {
    BinaryMask empty(64, 64);
    const double all_on = dice_loss(ag::constant(ag::Mat::Constant(4096, 1, 50.0)), empty).item();
    EXPECT_NEAR(all_on, 1 - 1.0 / 4097.0, 1e-9);
    EXPECT_NEAR(all_on, 0.99976, 1e-5);
    EXPECT_LT(dice_loss(ag::constant(ag::Mat::Constant(4096, 1, -50.0)), empty).item(), 1e-9);
}

TEST(MaskLosses, BceMatchesClampedProbabilityForm) {
    BinaryMask m = random_mask(6, 6, 2);
    ag::Mat l = random_mat(36, 1, 3, 4.0);
    double ref = 0;
    for (int i = 0; i < 36; ++i) {
        const double p = std::clamp(sigmoid(l(i, 0)), 1e-12, 1 - 1e-12);
        const double t = m.bits()[static_cast<std::size_t>(i)];
        ref += -(t * std::log(p) + (1 - t) * std::log(1 - p));
    }
    EXPECT_NEAR(bce_loss(ag::constant(l), m).item(), ref / 36, 1e-6);
}

TEST(MaskLosses, ShapeMismatch) {
    EXPECT_THROW(bce_loss(ag::constant(ag::Mat::Zero(10, 1)), BinaryMask(3, 3)), UsageError);
    EXPECT_THROW(dice_loss(ag::constant(ag::Mat::Zero(10, 1)), BinaryMask(3, 3)), UsageError);
}

TEST(MaskLosses, NonNegativeAndGradients) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        BinaryMask m = random_mask(4, 5, s);
        ag::Var l = ag::parameter(random_mat(20, 1, s + 100, 3.0));
        EXPECT_GE(bce_loss(l, m).item(), 0.0);
        EXPECT_GE(dice_loss(l, m).item(), 0.0);
        if (s < 3) {
            EXPECT_LT(grad_rel_error([&] { return bce_loss(l, m); }, l), 1e-4);
            EXPECT_LT(grad_rel_error([&] { return dice_loss(l, m); }, l), 1e-4);
        }
    }
    ag::Var logits = ag::parameter(random_mat(4, 9, 50));
    const std::vector<int> targets{1, 8, 0, 3};
    const std::vector<std::uint8_t> include{0, 1, 1, 1};
    EXPECT_LT(grad_rel_error([&] { return text_ce(logits, targets, include); }, logits), 1e-4);
}

TEST(TotalLoss, PaperWeightsExample) {
    LossWeights w;
    EXPECT_EQ(w.text, 1.0);
    EXPECT_EQ(w.mask, 1.0);
    EXPECT_EQ(w.bce, 2.0);
    EXPECT_EQ(w.dice, 0.5);
    LossBreakdown b = total_loss(2.0, {{0.5, 0.4}}, w);
    EXPECT_NEAR(b.total, 3.2, 1e-12);
    EXPECT_NEAR(b.bce, 0.5, 1e-15);
    EXPECT_EQ(b.n_masks, 1);
}

TEST(TotalLoss, NoMaskIsTextOnly) {
    LossWeights w;
    w.text = 0.7;
    LossBreakdown b = total_loss(2.5, {}, w);
    EXPECT_EQ(b.total, 0.7 * 2.5);
    EXPECT_EQ(b.n_masks, 0);
}

TEST(TotalLoss, AffineInEachWeight) {
    const std::vector<MaskTerm> terms{{0.3, 0.6}, {0.9, 0.2}};
    LossWeights w;
    const double base = total_loss(1.1, terms, w).total;
    LossWeights w2 = w;
    w2.bce *= 2;
    const double mean_bce = (0.3 + 0.9) / 2;
    EXPECT_NEAR(total_loss(1.1, terms, w2).total - base, w.mask * w.bce * mean_bce, 1e-12);
    LossWeights w3 = w;
    w3.text += 1.0;
    EXPECT_NEAR(total_loss(1.1, terms, w3).total - base, 1.1, 1e-12);
    LossWeights bad = w;
    bad.dice = -1;
    EXPECT_THROW(bad.validate(), UsageError);
}

TEST(TotalLoss, DifferentiableFormMatchesScalarForm) {
    LossWeights w;
    ag::Var txt = ag::scalar(1.7);
    std::vector<ag::Var> bce{ag::scalar(0.2), ag::scalar(0.8)}, dice{ag::scalar(0.5), ag::scalar(0.1)};
    const double v = total_loss(txt, bce, dice, w).item();
    EXPECT_NEAR(v, total_loss(1.7, {{0.2, 0.5}, {0.8, 0.1}}, w).total, 1e-12);
}
