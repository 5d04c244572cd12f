#pragma once

#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "seglm/autograd.hpp"
#include "seglm/datamodel.hpp"
#include "seglm/nn.hpp"
#include "seglm/spatial.hpp"
#include "seglm/vision_encoder.hpp"

namespace seglm {

/// Widths of the seg-embedding projection: {input, hidden, output}.
struct ProjectionConfig {
    std::vector<int> widths{128, 256, 64};
    void validate() const;
};

/// Two linear layers with a ReLU between them.
class Projection {
  public:
    Projection(const ProjectionConfig& cfg, ParameterStore& store, Initializer& init);
    int in_width() const { return fc1_.in_features(); }
    int out_width() const { return fc2_.out_features(); }
    ag::Var operator()(const ag::Var& raw) const;  // [n × in] → [n × out]
    ag::RowVec project(const ag::RowVec& raw) const;
    Linear& fc1() { return fc1_; }
    Linear& fc2() { return fc2_; }

  private:
    Linear fc1_;
    Linear fc2_;
};

struct DecoderConfig {
    int d_prompt = 64;
    int d_vis = 64;
    int n_blocks = 2;
    int n_heads = 4;
    int mlp_dim = 128;
    int upscale_stages = 2;  // each doubles resolution; the rest is bilinear
    void validate() const;
};

struct MaskLogits {
    int height = 0;
    int width = 0;
    ag::Mat values;  // [height × width]
};

/// Prompt-conditioned mask decoder: two-way attention between the prompt
/// tokens and the feature grid, learned upscaling, and a per-pixel dot product
/// with a hypernetwork output.
class MaskDecoder {
  public:
    MaskDecoder(const DecoderConfig& cfg, ParameterStore& store, Initializer& init);
    const DecoderConfig& config() const { return cfg_; }

    /// prompts [B × d_prompt], features [gh·gw × d_vis]. Returns mask logits
    /// [B·H·W × 1], one H×W block per prompt, with H = gh·patch.
    ag::Var decode(const ag::Var& prompts, const ag::Var& features, int grid_h, int grid_w, int patch) const;

    MaskLogits decode_mask(const ag::RowVec& prompt, const DenseFeatures& features) const;
    /// All prompts in one batched pass.
    std::vector<MaskLogits> decode_masks(const std::vector<ag::RowVec>& prompts, const DenseFeatures& features) const;

  private:
    struct Attention {
        Linear q, k, v, o;
        ag::Var operator()(const ag::Var& qi, const ag::Var& ki, const ag::Var& vi, int heads, int batch) const;
    };
    struct TwoWayBlock {
        Attention self_attn;
        LayerNorm norm1;
        Attention token_to_image;
        LayerNorm norm2;
        Linear mlp1, mlp2;
        LayerNorm norm3;
        Attention image_to_token;
        LayerNorm norm4;
    };
    struct UpscaleStage {
        Linear deconv;  // per-cell linear map to 4 sub-pixels
        LayerNorm norm;
        bool has_norm = false;
        int out_channels = 0;
    };

    Attention make_attention(ParameterStore& store, const std::string& name, Initializer& init) const;
    spatial::MapPtr shuffle_map(int stage, int h, int w, int channels, int batch) const;
    spatial::MapPtr resize_map(int h, int w, int factor, int batch) const;

    DecoderConfig cfg_;
    bool has_input_proj_ = false;
    Linear input_proj_;
    ag::Var no_mask_embed_;
    ag::Var mask_token_;
    std::vector<TwoWayBlock> blocks_;
    Attention final_attn_;
    LayerNorm final_norm_;
    std::vector<UpscaleStage> upscale_;
    Linear hyper1_, hyper2_, hyper3_;

    mutable std::mutex cache_mutex_;
    mutable std::map<std::tuple<int, int, int, int, int>, spatial::MapPtr> shuffle_maps_;
    mutable std::map<std::tuple<int, int, int, int>, spatial::MapPtr> resize_maps_;
    mutable std::map<std::pair<int, int>, ag::Mat> pe_cache_;
};

/// 1 where logit > threshold.
BinaryMask binarize(const MaskLogits& logits, double threshold = 0.0);

}  // namespace seglm
