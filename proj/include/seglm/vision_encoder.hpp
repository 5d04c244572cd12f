#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <utility>
#include <vector>

#include "seglm/autograd.hpp"
#include "seglm/datamodel.hpp"
#include "seglm/nn.hpp"
#include "seglm/spatial.hpp"

namespace seglm {

struct VisionConfig {
    int patch_size = 8;
    int d_vis = 64;
    int n_blocks = 2;
    int channels = 3;
    bool bias = true;
    std::optional<LoraConfig> lora;  // backbone adapters (ablation only)

    void validate() const;
};

/// Dense feature grid, one row per cell in row-major (gy, gx) order.
struct DenseFeatures {
    int grid_h = 0;
    int grid_w = 0;
    int patch_size = 0;
    int d_vis = 0;
    ag::Mat grid;  // [grid_h·grid_w × d_vis]

    const double* cell(int gy, int gx) const { return grid.data() + (Eigen::Index(gy) * grid_w + gx) * d_vis; }
};

/// Image as [H·W × C] pixel rows.
ag::Mat image_to_mat(const Image& image);

/// Patch stem (p×p stride-p conv), residual 3×3 conv blocks, LayerNorm neck.
class VisionEncoder {
  public:
    VisionEncoder(const VisionConfig& cfg, ParameterStore& store, Initializer& init, Initializer* lora_init = nullptr);

    const VisionConfig& config() const { return cfg_; }

    /// Differentiable features [grid cells × d_vis].
    ag::Var forward(const Image& image) const;
    /// First-layer activations (per-patch, before any spatial mixing).
    ag::Var stem(const Image& image) const;
    /// Inference-mode features.
    DenseFeatures encode(const Image& image) const;

  private:
    struct Block {
        Linear conv1;
        Linear conv2;
    };
    void check(const Image& image) const;
    spatial::MapPtr patch_map(int h, int w) const;
    spatial::MapPtr conv_map(int gh, int gw) const;

    VisionConfig cfg_;
    Linear stem_;
    std::vector<Block> blocks_;
    LayerNorm neck_;

    mutable std::mutex cache_mutex_;
    mutable std::map<std::pair<int, int>, spatial::MapPtr> patch_maps_;
    mutable std::map<std::pair<int, int>, spatial::MapPtr> conv_maps_;
};

/// Projects grid features to the LM width: [cells × d_vis] → [cells × d_model].
ag::Var patch_embed_for_lm(const ag::Var& features, const Linear& projector);

}  // namespace seglm
