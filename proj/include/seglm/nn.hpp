#pragma once

#include <optional>
#include <string>

#include "seglm/autograd.hpp"
#include "seglm/lora.hpp"
#include "seglm/params.hpp"

namespace seglm {

/// y = x·W + b (+ LoRA delta). W is stored [d_in × d_out].
struct Linear {
    ag::Var weight;
    ag::Var bias;  // may be undefined
    std::optional<LoraAdapter> lora;

    int in_features() const { return static_cast<int>(weight.rows()); }
    int out_features() const { return static_cast<int>(weight.cols()); }
    ag::Var operator()(const ag::Var& x) const;
};

Linear make_linear(ParameterStore& store, const std::string& name, ParamGroup group, int in, int out,
                   double weight_std, Initializer& init, bool with_bias = true);

struct LayerNorm {
    ag::Var gamma;
    ag::Var beta;
    ag::Var operator()(const ag::Var& x) const { return ag::layer_norm(x, gamma, beta); }
};

LayerNorm make_layer_norm(ParameterStore& store, const std::string& name, ParamGroup group, int width);

}  // namespace seglm
