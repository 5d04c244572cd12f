#include "seglm/vision_encoder.hpp"

#include <cmath>

#include "seglm/errors.hpp"

namespace seglm {

void VisionConfig::validate() const {
    if (patch_size < 1 || d_vis < 1 || n_blocks < 0 || channels < 1) {
        throw UsageError("invalid vision encoder configuration");
    }
}

ag::Mat image_to_mat(const Image& image) {
    ag::Mat m(Eigen::Index(image.height()) * image.width(), image.channels());
    std::copy(image.pixels().begin(), image.pixels().end(), m.data());
    return m;
}

VisionEncoder::VisionEncoder(const VisionConfig& cfg, ParameterStore& store, Initializer& init, Initializer* lora_init)
    : cfg_(cfg) {
    cfg_.validate();
    const int p = cfg_.patch_size, d = cfg_.d_vis;
    const int stem_in = p * p * cfg_.channels;
    const auto g = ParamGroup::vision_base;
    stem_ = make_linear(store, "vision.stem", g, stem_in, d, std::sqrt(2.0 / stem_in), init, cfg_.bias);
    for (int i = 0; i < cfg_.n_blocks; ++i) {
        const std::string name = "vision.block" + std::to_string(i);
        Block b;
        b.conv1 = make_linear(store, name + ".conv1", g, 9 * d, d, std::sqrt(2.0 / (9 * d)), init, cfg_.bias);
        b.conv2 = make_linear(store, name + ".conv2", g, 9 * d, d, 0.5 / std::sqrt(9.0 * d), init, cfg_.bias);
        blocks_.push_back(std::move(b));
    }
    neck_ = make_layer_norm(store, "vision.neck", g, d);

    if (cfg_.lora) {
        if (!lora_init) throw UsageError("vision adapters need an initializer");
        const auto lg = ParamGroup::vision_lora;
        wrap_linear(stem_, "vision.stem", store, lg, *cfg_.lora, *lora_init);
        for (int i = 0; i < cfg_.n_blocks; ++i) {
            const std::string name = "vision.block" + std::to_string(i);
            wrap_linear(blocks_[static_cast<std::size_t>(i)].conv1, name + ".conv1", store, lg, *cfg_.lora, *lora_init);
            wrap_linear(blocks_[static_cast<std::size_t>(i)].conv2, name + ".conv2", store, lg, *cfg_.lora, *lora_init);
        }
    }
}

void VisionEncoder::check(const Image& image) const {
    if (image.channels() != cfg_.channels) {
        throw DataError("image has " + std::to_string(image.channels()) + " channels, encoder expects " +
                        std::to_string(cfg_.channels));
    }
    const int p = cfg_.patch_size;
    if (image.height() < p || image.width() < p || image.height() % p != 0 || image.width() % p != 0) {
        throw DataError("image " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                        " not divisible by patch size " + std::to_string(p));
    }
}

spatial::MapPtr VisionEncoder::patch_map(int h, int w) const {
    std::lock_guard lock(cache_mutex_);
    auto& m = patch_maps_[{h, w}];
    if (!m) m = spatial::patchify(h, w, cfg_.channels, cfg_.patch_size);
    return m;
}

spatial::MapPtr VisionEncoder::conv_map(int gh, int gw) const {
    std::lock_guard lock(cache_mutex_);
    auto& m = conv_maps_[{gh, gw}];
    if (!m) m = spatial::im2col3x3(gh, gw, cfg_.d_vis);
    return m;
}

ag::Var VisionEncoder::stem(const Image& image) const {
    check(image);
    ag::Var pixels = ag::constant(image_to_mat(image));
    return ag::gelu(stem_(ag::apply_map(pixels, patch_map(image.height(), image.width()))));
}

ag::Var VisionEncoder::forward(const Image& image) const {
    ag::Var x = stem(image);
    const int gh = image.height() / cfg_.patch_size, gw = image.width() / cfg_.patch_size;
    const auto cols = conv_map(gh, gw);
    for (const auto& b : blocks_) {
        ag::Var h = ag::gelu(b.conv1(ag::apply_map(x, cols)));
        x = ag::add(x, b.conv2(ag::apply_map(h, cols)));
    }
    return neck_(x);
}

DenseFeatures VisionEncoder::encode(const Image& image) const {
    ag::NoGradGuard guard;
    DenseFeatures f;
    f.grid = forward(image).value();
    f.grid_h = image.height() / cfg_.patch_size;
    f.grid_w = image.width() / cfg_.patch_size;
    f.patch_size = cfg_.patch_size;
    f.d_vis = cfg_.d_vis;
    return f;
}

ag::Var patch_embed_for_lm(const ag::Var& features, const Linear& projector) {
    if (features.cols() != projector.in_features()) {
        throw UsageError("feature width " + std::to_string(features.cols()) + " does not match projector input " +
                         std::to_string(projector.in_features()));
    }
    return projector(features);
}

}  // namespace seglm
