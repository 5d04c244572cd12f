#include "seglm/params.hpp"

#include "seglm/errors.hpp"

namespace seglm {

std::string_view to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::vision_base: return "vision_base";
        case ParamGroup::vision_lora: return "vision_lora";
        case ParamGroup::lm_base: return "lm_base";
        case ParamGroup::lm_lora: return "lm_lora";
        case ParamGroup::embed_tokens: return "embed_tokens";
        case ParamGroup::lm_head: return "lm_head";
        case ParamGroup::projection: return "projection";
        case ParamGroup::decoder: return "decoder";
    }
    return "?";
}

ParamGroup param_group_from_string(std::string_view s) {
    for (auto g : kAllGroups) {
        if (to_string(g) == s) return g;
    }
    throw DataError("unknown parameter group '" + std::string(s) + "'");
}

ag::Var ParameterStore::add(std::string name, ParamGroup group, ag::Mat init) {
    if (index_.count(name)) throw UsageError("duplicate parameter '" + name + "'");
    ag::Var v = ag::parameter(std::move(init), true);
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), group, v});
    return v;
}

bool ParameterStore::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

const NamedParam& ParameterStore::get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw UsageError("unknown parameter '" + std::string(name) + "'");
    return params_[it->second];
}

std::vector<NamedParam> ParameterStore::in_group(ParamGroup g) const {
    std::vector<NamedParam> out;
    for (const auto& p : params_) {
        if (p.group == g) out.push_back(p);
    }
    return out;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.var.value().size());
    return n;
}

std::size_t ParameterStore::scalar_count(ParamGroup g) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p.group == g) n += static_cast<std::size_t>(p.var.value().size());
    }
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

ag::Mat Initializer::normal(Eigen::Index rows, Eigen::Index cols, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    ag::Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng_);
    return m;
}

ag::Mat Initializer::uniform(Eigen::Index rows, Eigen::Index cols, double bound) {
    std::uniform_real_distribution<double> d(-bound, bound);
    ag::Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng_);
    return m;
}

}  // namespace seglm
