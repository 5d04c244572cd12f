#include "seglm/lora.hpp"

#include <algorithm>
#include <cmath>

#include "seglm/errors.hpp"
#include "seglm/nn.hpp"

namespace seglm {

ag::Var LoraAdapter::delta(const ag::Var& x) const {
    return ag::scale(ag::matmul_nt(ag::matmul_nt(x, a), b), scaling());
}

void wrap_linear(Linear& layer, const std::string& target, ParameterStore& store, ParamGroup group,
                 const LoraConfig& cfg, Initializer& init) {
    const int d_in = layer.in_features();
    const int d_out = layer.out_features();
    if (cfg.rank < 1 || cfg.rank > std::min(d_in, d_out)) {
        throw UsageError("LoRA rank " + std::to_string(cfg.rank) + " out of range for " + target + " (" +
                         std::to_string(d_in) + "x" + std::to_string(d_out) + ")");
    }
    if (!std::isfinite(cfg.alpha)) throw UsageError("LoRA alpha must be finite");
    if (layer.lora) throw UsageError(target + " already has an adapter");
    LoraAdapter ad;
    ad.rank = cfg.rank;
    ad.alpha = cfg.alpha;
    ad.target = target;
    ad.a = store.add(target + ".lora_a", group, init.uniform(cfg.rank, d_in, 1.0 / std::sqrt(double(d_in))));
    ad.b = store.add(target + ".lora_b", group, Initializer::zeros(d_out, cfg.rank));
    layer.lora = std::move(ad);
}

bool FreezePolicy::trainable(ParamGroup g) const {
    switch (g) {
        case ParamGroup::vision_base: return vision_base;
        case ParamGroup::vision_lora: return vision_lora;
        case ParamGroup::lm_base: return lm_base;
        case ParamGroup::lm_lora: return lm_lora;
        case ParamGroup::embed_tokens: return embed_tokens;
        case ParamGroup::lm_head: return lm_head;
        case ParamGroup::projection: return projection;
        case ParamGroup::decoder: return decoder;
    }
    return false;
}

void FreezePolicy::apply(ParameterStore& store) const {
    for (const auto& p : store.all()) {
        ag::Var v = p.var;
        v.set_requires_grad(trainable(p.group));
    }
}

TrainableSet trainable_parameters(const ParameterStore& store, const FreezePolicy& policy) {
    TrainableSet out;
    for (const auto& p : store.all()) {
        const auto n = static_cast<std::size_t>(p.var.value().size());
        out.total_count += n;
        if (policy.trainable(p.group)) {
            out.params.push_back(p);
            out.trainable_count += n;
        }
    }
    return out;
}

}  // namespace seglm
