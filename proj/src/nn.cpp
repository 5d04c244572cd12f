#include "seglm/nn.hpp"

namespace seglm {

ag::Var Linear::operator()(const ag::Var& x) const {
    ag::Var y = ag::linear(x, weight, bias);
    if (lora) y = ag::add(y, lora->delta(x));
    return y;
}

Linear make_linear(ParameterStore& store, const std::string& name, ParamGroup group, int in, int out,
                   double weight_std, Initializer& init, bool with_bias) {
    Linear l;
    l.weight = store.add(name + ".weight", group, init.normal(in, out, weight_std));
    if (with_bias) l.bias = store.add(name + ".bias", group, Initializer::zeros(1, out));
    return l;
}

LayerNorm make_layer_norm(ParameterStore& store, const std::string& name, ParamGroup group, int width) {
    return {store.add(name + ".gamma", group, Initializer::ones(1, width)),
            store.add(name + ".beta", group, Initializer::zeros(1, width))};
}

}  // namespace seglm
