#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "seglm/autograd.hpp"

namespace seglm {

/// Parameter groups; freezing and checkpoint tags work at this granularity.
enum class ParamGroup { vision_base, vision_lora, lm_base, lm_lora, embed_tokens, lm_head, projection, decoder };

inline constexpr ParamGroup kAllGroups[] = {ParamGroup::vision_base,  ParamGroup::vision_lora, ParamGroup::lm_base,
                                            ParamGroup::lm_lora,      ParamGroup::embed_tokens, ParamGroup::lm_head,
                                            ParamGroup::projection,   ParamGroup::decoder};

std::string_view to_string(ParamGroup g);
ParamGroup param_group_from_string(std::string_view s);

struct NamedParam {
    std::string name;
    ParamGroup group;
    ag::Var var;
};

/// Owns every parameter of a model in creation order.
class ParameterStore {
  public:
    ag::Var add(std::string name, ParamGroup group, ag::Mat init);
    bool contains(std::string_view name) const;
    const NamedParam& get(std::string_view name) const;
    ag::Var var(std::string_view name) const { return get(name).var; }
    const std::vector<NamedParam>& all() const { return params_; }
    std::vector<NamedParam> in_group(ParamGroup g) const;
    std::size_t scalar_count() const;
    std::size_t scalar_count(ParamGroup g) const;
    void zero_grad();

  private:
    std::vector<NamedParam> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Deterministic weight initialization from a seed.
class Initializer {
  public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}
    ag::Mat normal(Eigen::Index rows, Eigen::Index cols, double stddev);
    ag::Mat uniform(Eigen::Index rows, Eigen::Index cols, double bound);
    static ag::Mat zeros(Eigen::Index rows, Eigen::Index cols) { return ag::Mat::Zero(rows, cols); }
    static ag::Mat ones(Eigen::Index rows, Eigen::Index cols) { return ag::Mat::Ones(rows, cols); }

  private:
    std::mt19937_64 rng_;
};

}  // namespace seglm
