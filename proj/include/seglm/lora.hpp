#pragma once

#include <string>
#include <vector>

#include "seglm/autograd.hpp"
#include "seglm/params.hpp"

namespace seglm {

/// Low-rank additive update (alpha/rank)·B·A to a linear map.
/// A is rank×d_in, B is d_out×rank; B starts at zero.
struct LoraAdapter {
    ag::Var a;
    ag::Var b;
    int rank = 0;
    double alpha = 0.0;
    std::string target;

    double scaling() const { return alpha / rank; }
    /// (alpha/rank)·x·Aᵀ·Bᵀ for row-major x [n×d_in].
    ag::Var delta(const ag::Var& x) const;
};

struct LoraConfig {
    int rank = 8;
    double alpha = 16.0;
};

struct Linear;

/// Attaches an adapter to the layer, registering "<target>.lora_a" and
/// "<target>.lora_b" in the given group. Throws UsageError if rank is out of
/// range or the layer already has an adapter.
void wrap_linear(Linear& layer, const std::string& target, ParameterStore& store, ParamGroup group,
                 const LoraConfig& cfg, Initializer& init);

/// Which groups receive gradient updates.
struct FreezePolicy {
    bool vision_base = false;
    bool vision_lora = true;
    bool lm_base = false;
    bool lm_lora = true;
    bool embed_tokens = true;
    bool lm_head = true;
    bool projection = true;
    bool decoder = true;

    bool trainable(ParamGroup g) const;
    /// Sets requires_grad on every parameter of the store to match.
    void apply(ParameterStore& store) const;
};

struct TrainableSet {
    std::vector<NamedParam> params;
    std::size_t trainable_count = 0;
    std::size_t total_count = 0;
};

TrainableSet trainable_parameters(const ParameterStore& store, const FreezePolicy& policy);

}  // namespace seglm
