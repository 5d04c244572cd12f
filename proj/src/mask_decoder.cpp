#include "seglm/mask_decoder.hpp"

#include <algorithm>
#include <cmath>

#include "seglm/errors.hpp"

namespace seglm {

void ProjectionConfig::validate() const {
    if (widths.size() != 3) throw UsageError("projection needs exactly three widths");
    for (int w : widths) {
        if (w < 1) throw UsageError("projection widths must be positive");
    }
}

Projection::Projection(const ProjectionConfig& cfg, ParameterStore& store, Initializer& init) {
    cfg.validate();
    const int in = cfg.widths[0], hid = cfg.widths[1], out = cfg.widths[2];
    const auto g = ParamGroup::projection;
    fc1_ = make_linear(store, "proj.fc1", g, in, hid, std::sqrt(2.0 / in), init);
    fc2_ = make_linear(store, "proj.fc2", g, hid, out, 1.0 / std::sqrt(double(hid)), init);
}

ag::Var Projection::operator()(const ag::Var& raw) const {
    if (raw.cols() != in_width()) {
        throw UsageError("projection expects width " + std::to_string(in_width()) + ", got " +
                         std::to_string(raw.cols()));
    }
    return fc2_(ag::relu(fc1_(raw)));
}

ag::RowVec Projection::project(const ag::RowVec& raw) const {
    ag::NoGradGuard guard;
    return (*this)(ag::constant(raw)).value().row(0);
}

void DecoderConfig::validate() const {
    if (d_prompt < 8 || d_prompt % 8 != 0) throw UsageError("d_prompt must be a positive multiple of 8");
    if (n_heads < 1 || d_prompt % n_heads != 0) throw UsageError("d_prompt must be divisible by n_heads");
    if (d_vis < 1 || n_blocks < 0 || mlp_dim < 1 || upscale_stages < 0) {
        throw UsageError("invalid mask decoder configuration");
    }
}

MaskDecoder::Attention MaskDecoder::make_attention(ParameterStore& store, const std::string& name,
                                                   Initializer& init) const {
    const int d = cfg_.d_prompt;
    const double sd = 1.0 / std::sqrt(double(d));
    const auto g = ParamGroup::decoder;
    return {make_linear(store, name + ".q", g, d, d, sd, init), make_linear(store, name + ".k", g, d, d, sd, init),
            make_linear(store, name + ".v", g, d, d, sd, init), make_linear(store, name + ".o", g, d, d, sd, init)};
}

ag::Var MaskDecoder::Attention::operator()(const ag::Var& qi, const ag::Var& ki, const ag::Var& vi, int heads,
                                           int batch) const {
    return o(ag::attention(q(qi), k(ki), v(vi), heads, batch, false));
}

MaskDecoder::MaskDecoder(const DecoderConfig& cfg, ParameterStore& store, Initializer& init) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.d_prompt;
    const auto g = ParamGroup::decoder;
    has_input_proj_ = cfg_.d_vis != d;
    if (has_input_proj_) {
        input_proj_ = make_linear(store, "dec.input_proj", g, cfg_.d_vis, d, 1.0 / std::sqrt(double(cfg_.d_vis)), init);
    }
    no_mask_embed_ = store.add("dec.no_mask_embed", g, init.normal(1, d, 0.1));
    mask_token_ = store.add("dec.mask_token", g, init.normal(1, d, 1.0));
    for (int i = 0; i < cfg_.n_blocks; ++i) {
        const std::string n = "dec.block" + std::to_string(i);
        TwoWayBlock b;
        b.self_attn = make_attention(store, n + ".self_attn", init);
        b.norm1 = make_layer_norm(store, n + ".norm1", g, d);
        b.token_to_image = make_attention(store, n + ".t2i", init);
        b.norm2 = make_layer_norm(store, n + ".norm2", g, d);
        b.mlp1 = make_linear(store, n + ".mlp1", g, d, cfg_.mlp_dim, std::sqrt(2.0 / d), init);
        b.mlp2 = make_linear(store, n + ".mlp2", g, cfg_.mlp_dim, d, 1.0 / std::sqrt(double(cfg_.mlp_dim)), init);
        b.norm3 = make_layer_norm(store, n + ".norm3", g, d);
        b.image_to_token = make_attention(store, n + ".i2t", init);
        b.norm4 = make_layer_norm(store, n + ".norm4", g, d);
        blocks_.push_back(std::move(b));
    }
    final_attn_ = make_attention(store, "dec.final_attn", init);
    final_norm_ = make_layer_norm(store, "dec.final_norm", g, d);

    int channels = d;
    for (int s = 0; s < cfg_.upscale_stages; ++s) {
        const int out = s == 0 ? std::max(d / 4, 1) : std::max(d / 8, 1);
        const std::string n = "dec.upscale" + std::to_string(s);
        UpscaleStage st;
        st.deconv = make_linear(store, n + ".deconv", g, channels, 4 * out, std::sqrt(2.0 / channels), init);
        st.has_norm = s + 1 < cfg_.upscale_stages;
        if (st.has_norm) st.norm = make_layer_norm(store, n + ".norm", g, out);
        st.out_channels = out;
        upscale_.push_back(std::move(st));
        channels = out;
    }
    hyper1_ = make_linear(store, "dec.hyper1", g, d, d, std::sqrt(2.0 / d), init);
    hyper2_ = make_linear(store, "dec.hyper2", g, d, d, std::sqrt(2.0 / d), init);
    hyper3_ = make_linear(store, "dec.hyper3", g, d, channels, 1.0 / std::sqrt(double(d)), init);
}

spatial::MapPtr MaskDecoder::shuffle_map(int stage, int h, int w, int channels, int batch) const {
    std::lock_guard lock(cache_mutex_);
    auto& m = shuffle_maps_[{stage, h, w, channels, batch}];
    if (!m) m = spatial::pixel_shuffle2(h, w, channels, batch);
    return m;
}

spatial::MapPtr MaskDecoder::resize_map(int h, int w, int factor, int batch) const {
    std::lock_guard lock(cache_mutex_);
    auto& m = resize_maps_[{h, w, factor, batch}];
    if (!m) m = spatial::upsample_bilinear(h, w, 1, factor, batch);
    return m;
}

ag::Var MaskDecoder::decode(const ag::Var& prompts, const ag::Var& features, int grid_h, int grid_w, int patch) const {
    const int d = cfg_.d_prompt;
    const int batch = static_cast<int>(prompts.rows());
    const int cells = grid_h * grid_w;
    if (batch < 1) throw UsageError("decode needs at least one prompt");
    if (prompts.cols() != d) throw UsageError("prompt width does not match decoder");
    if (features.rows() != cells || features.cols() != cfg_.d_vis) throw UsageError("feature grid shape mismatch");
    const int scale = 1 << cfg_.upscale_stages;
    if (patch % scale != 0) {
        throw UsageError("patch size " + std::to_string(patch) + " not divisible by upscale factor " +
                         std::to_string(scale));
    }
    if (!prompts.value().allFinite() || !features.value().allFinite()) {
        throw NumericalError("non-finite input to mask decoder");
    }

    ag::Mat pe;
    {
        std::lock_guard lock(cache_mutex_);
        auto& cached = pe_cache_[{grid_h, grid_w}];
        if (cached.size() == 0) cached = spatial::sinusoidal_grid(grid_h, grid_w, d);
        pe = cached;
    }

    // image side: [B·cells × d]
    ag::Var src = has_input_proj_ ? input_proj_(features) : features;
    src = ag::add_row(src, no_mask_embed_);
    ag::Var keys = batch == 1 ? src : ag::repeat_rows(src, batch);
    ag::Var key_pe = ag::constant(batch == 1 ? pe : ag::Mat(pe.replicate(batch, 1)));

    // token side: [mask_token; prompt] per batch entry
    std::vector<int> order;
    for (int b = 0; b < batch; ++b) {
        order.push_back(0);
        order.push_back(b + 1);
    }
    const std::vector<ag::Var> token_parts{mask_token_, prompts};
    ag::Var queries = ag::gather_rows(ag::concat_rows(token_parts), order);
    const ag::Var query_pe = queries;
    const int h = cfg_.n_heads;

    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& b = blocks_[i];
        if (i == 0) {
            queries = b.self_attn(queries, queries, queries, h, batch);
        } else {
            ag::Var q = ag::add(queries, query_pe);
            queries = ag::add(queries, b.self_attn(q, q, queries, h, batch));
        }
        queries = b.norm1(queries);
        ag::Var q = ag::add(queries, query_pe);
        ag::Var k = ag::add(keys, key_pe);
        queries = b.norm2(ag::add(queries, b.token_to_image(q, k, keys, h, batch)));
        queries = b.norm3(ag::add(queries, b.mlp2(ag::gelu(b.mlp1(queries)))));
        q = ag::add(queries, query_pe);
        k = ag::add(keys, key_pe);
        keys = b.norm4(ag::add(keys, b.image_to_token(k, q, queries, h, batch)));
    }
    {
        ag::Var q = ag::add(queries, query_pe);
        ag::Var k = ag::add(keys, key_pe);
        queries = final_norm_(ag::add(queries, final_attn_(q, k, keys, h, batch)));
    }

    std::vector<int> mask_rows;
    for (int b = 0; b < batch; ++b) mask_rows.push_back(2 * b);
    ag::Var mask_out = ag::gather_rows(queries, mask_rows);
    ag::Var hyper = hyper3_(ag::gelu(hyper2_(ag::gelu(hyper1_(mask_out)))));

    ag::Var up = keys;
    int uh = grid_h, uw = grid_w;
    for (std::size_t s = 0; s < upscale_.size(); ++s) {
        const auto& st = upscale_[s];
        up = ag::apply_map(st.deconv(up), shuffle_map(static_cast<int>(s), uh, uw, st.out_channels, batch));
        uh *= 2;
        uw *= 2;
        if (st.has_norm) up = st.norm(up);
        up = ag::gelu(up);
    }
    ag::Var logits = ag::grouped_row_dot(hyper, up);
    const int rest = patch / scale;
    if (rest > 1) logits = ag::apply_map(logits, resize_map(uh, uw, rest, batch));
    return logits;
}

std::vector<MaskLogits> MaskDecoder::decode_masks(const std::vector<ag::RowVec>& prompts,
                                                  const DenseFeatures& features) const {
    if (prompts.empty()) return {};
    ag::NoGradGuard guard;
    ag::Mat stacked(static_cast<Eigen::Index>(prompts.size()), cfg_.d_prompt);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        if (prompts[i].size() != cfg_.d_prompt) throw UsageError("prompt width does not match decoder");
        stacked.row(static_cast<Eigen::Index>(i)) = prompts[i];
    }
    const ag::Var out = decode(ag::constant(stacked), ag::constant(features.grid), features.grid_h, features.grid_w,
                               features.patch_size);
    const int H = features.grid_h * features.patch_size, W = features.grid_w * features.patch_size;
    std::vector<MaskLogits> masks;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        MaskLogits m{H, W, ag::Mat(H, W)};
        std::copy_n(out.value().data() + static_cast<Eigen::Index>(i) * H * W, H * W, m.values.data());
        masks.push_back(std::move(m));
    }
    return masks;
}

MaskLogits MaskDecoder::decode_mask(const ag::RowVec& prompt, const DenseFeatures& features) const {
    return decode_masks({prompt}, features).front();
}

BinaryMask binarize(const MaskLogits& logits, double threshold) {
    BinaryMask m(logits.height, logits.width);
    for (int y = 0; y < logits.height; ++y) {
        for (int x = 0; x < logits.width; ++x) m.at(y, x) = logits.values(y, x) > threshold ? 1 : 0;
    }
    return m;
}

}  // namespace seglm
