#include <gtest/gtest.h>

#include <set>

#include "seglm/errors.hpp"
#include "seglm/lora.hpp"
#include "seglm/model.hpp"
#include "seglm/nn.hpp"
#include "seglm/trainer.hpp"
#include "test_util.hpp"

using namespace seglm;
using seglm::testing::random_mat;

TEST(Lora, ZeroInitIsExactlyTheBaseMap) {
    ParameterStore store;
    Initializer init(1);
    Linear layer = make_linear(store, "fc", ParamGroup::lm_base, 6, 5, 0.5, init);
    ag::Var x = ag::constant(random_mat(4, 6, 2));
    const ag::Mat base = layer(x).value();
    wrap_linear(layer, "fc", store, ParamGroup::lm_lora, LoraConfig{3, 6.0}, init);
    EXPECT_EQ(layer.lora->b.value(), ag::Mat::Zero(5, 3));
    EXPECT_EQ(layer(x).value(), base);
    EXPECT_DOUBLE_EQ(layer.lora->scaling(), 2.0);
    EXPECT_TRUE(store.contains("fc.lora_a"));
    EXPECT_EQ(store.get("fc.lora_b").group, ParamGroup::lm_lora);
}

TEST(Lora, DeltaIsScaledLowRankProduct) {
    ParameterStore store;
    Initializer init(3);
    Linear layer = make_linear(store, "fc", ParamGroup::lm_base, 6, 5, 0.5, init);
    wrap_linear(layer, "fc", store, ParamGroup::lm_lora, LoraConfig{2, 3.0}, init);
    layer.lora->b.mutable_value() = random_mat(5, 2, 4);
    ag::Mat x = random_mat(3, 6, 5);
    const ag::Mat want = x * layer.weight.value() + ag::Mat::Ones(3, 1) * layer.bias.value() +
                         1.5 * x * layer.lora->a.value().transpose() * layer.lora->b.value().transpose();
    EXPECT_LT((layer(ag::constant(x)).value() - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Lora, RankValidation) {
    ParameterStore store;
    Initializer init(6);
    Linear layer = make_linear(store, "fc", ParamGroup::lm_base, 6, 4, 0.5, init);
    EXPECT_THROW(wrap_linear(layer, "fc", store, ParamGroup::lm_lora, LoraConfig{5, 1.0}, init), UsageError);
    EXPECT_THROW(wrap_linear(layer, "fc", store, ParamGroup::lm_lora, LoraConfig{0, 1.0}, init), UsageError);
    wrap_linear(layer, "fc", store, ParamGroup::lm_lora, LoraConfig{4, 1.0}, init);
    EXPECT_THROW(wrap_linear(layer, "fc", store, ParamGroup::lm_lora, LoraConfig{2, 1.0}, init), UsageError);
}

TEST(Lora, FullRankAdapterFitsAnyLinearMap) {
    // least-squares oracle: the best achievable loss is 0 because the target is
    // itself linear and the adapter has full rank
    ParameterStore store;
    Initializer init(7);
    Linear layer = make_linear(store, "fc", ParamGroup::lm_base, 4, 3, 0.5, init);
    wrap_linear(layer, "fc", store, ParamGroup::lm_lora, LoraConfig{3, 3.0}, init);
    FreezePolicy{}.apply(store);
    const ag::Mat x = random_mat(32, 4, 8);
    const ag::Mat target_w = random_mat(4, 3, 9);
    const ag::Mat y = x * target_w + ag::Mat::Ones(32, 1) * layer.bias.value();
    AdamW opt(trainable_parameters(store, FreezePolicy{}).params, 0.9, 0.999, 1e-8, 0.0);
    auto loss = [&] { return ag::mean_all(ag::mul(ag::sub(layer(ag::constant(x)), ag::constant(y)), ag::sub(layer(ag::constant(x)), ag::constant(y)))); };
    const ag::Mat w0 = layer.weight.value();
    const double start = loss().item();
    for (int i = 0; i < 3000; ++i) {
        store.zero_grad();
        ag::backward(loss());
        opt.step(i < 2000 ? 2e-2 : 2e-3);
    }
    EXPECT_LT(loss().item(), 1e-6 * start);
    EXPECT_EQ(layer.weight.value(), w0);  // base frozen throughout
}

TEST(Lora, DefaultTrainableSet) {
    auto model = SegModel::create(ModelConfig{}, default_base_vocabulary());
    TrainableSet t = trainable_parameters(model->params(), model->policy());
    std::set<ParamGroup> groups;
    for (const auto& p : t.params) {
        groups.insert(p.group);
        if (p.group == ParamGroup::lm_lora) {
            EXPECT_TRUE(p.name.find(".attn.q.") != std::string::npos || p.name.find(".attn.v.") != std::string::npos)
                << p.name;
        }
    }
    EXPECT_EQ(groups, (std::set<ParamGroup>{ParamGroup::lm_lora, ParamGroup::embed_tokens, ParamGroup::lm_head,
                                            ParamGroup::projection, ParamGroup::decoder}));
    EXPECT_LT(2 * t.trainable_count, t.total_count);
    EXPECT_EQ(t.total_count, model->params().scalar_count());
    for (const auto& p : model->params().all()) EXPECT_EQ(p.var.requires_grad(), model->policy().trainable(p.group));
}

TEST(Lora, VisionAdapterAblation) {
    ModelConfig cfg;
    cfg.vision.lora = LoraConfig{4, 8};
    auto model = SegModel::create(cfg, default_base_vocabulary());
    TrainableSet t = trainable_parameters(model->params(), model->policy());
    bool vision_lora = false;
    for (const auto& p : t.params) {
        EXPECT_NE(p.group, ParamGroup::vision_base) << p.name;
        vision_lora = vision_lora || p.group == ParamGroup::vision_lora;
    }
    EXPECT_TRUE(vision_lora);
    EXPECT_TRUE(model->vision_trainable());
}
