#pragma once

#include <span>
#include <vector>

#include "seglm/autograd.hpp"
#include "seglm/datamodel.hpp"

namespace seglm {

struct LossWeights {
    double text = 1.0;
    double mask = 1.0;
    double bce = 2.0;
    double dice = 0.5;
    void validate() const;
};

inline constexpr double kDiceEpsilon = 1.0;

/// Mean cross-entropy over rows whose target is selected by `include` and is
/// not `pad_id`. logits rows align with targets.
ag::Var text_ce(const ag::Var& logits, std::span<const int> targets, std::span<const std::uint8_t> include,
                int pad_id = -1);

/// Mean per-pixel logistic loss; logits is an [H·W × 1] column.
ag::Var bce_loss(const ag::Var& logits, const BinaryMask& target);
/// Soft dice on sigmoid probabilities with smoothing kDiceEpsilon.
ag::Var dice_loss(const ag::Var& logits, const BinaryMask& target);

struct MaskTerm {
    double bce = 0.0;
    double dice = 0.0;
};

struct LossBreakdown {
    double text = 0.0;
    double bce = 0.0;   // mean over masks, 0 without masks
    double dice = 0.0;  // mean over masks, 0 without masks
    double total = 0.0;
    int n_masks = 0;
};

/// text·L_txt + mask·mean_k(bce·BCE_k + dice·DICE_k); masks may be empty.
LossBreakdown total_loss(double text_ce_value, const std::vector<MaskTerm>& masks, const LossWeights& w);

/// Differentiable counterpart; bce and dice hold one scalar per mask.
ag::Var total_loss(const ag::Var& text_ce_value, std::span<const ag::Var> bce, std::span<const ag::Var> dice,
                   const LossWeights& w);

}  // namespace seglm
