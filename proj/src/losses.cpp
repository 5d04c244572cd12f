#include "seglm/losses.hpp"

#include <cmath>

#include "seglm/errors.hpp"

namespace seglm {

void LossWeights::validate() const {
    for (double v : {text, mask, bce, dice}) {
        if (!std::isfinite(v) || v < 0.0) throw UsageError("loss weights must be finite and non-negative");
    }
}

ag::Var text_ce(const ag::Var& logits, std::span<const int> targets, std::span<const std::uint8_t> include,
                int pad_id) {
    if (static_cast<std::size_t>(logits.rows()) != targets.size() || targets.size() != include.size()) {
        throw UsageError("text_ce: logits, targets and mask must align");
    }
    std::vector<int> rows, kept;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (include[i] && targets[i] != pad_id) {
            rows.push_back(static_cast<int>(i));
            kept.push_back(targets[i]);
        }
    }
    if (rows.empty()) throw UsageError("text_ce: empty assistant span");
    if (rows.size() == targets.size()) return ag::softmax_cross_entropy(logits, kept);
    return ag::softmax_cross_entropy(ag::gather_rows(logits, rows), kept);
}

namespace {
void check_mask_shape(const ag::Var& logits, const BinaryMask& target) {
    const auto n = static_cast<Eigen::Index>(target.height()) * target.width();
    if (logits.rows() != n || logits.cols() != 1) {
        throw UsageError("mask logits shape does not match target " + std::to_string(target.height()) + "x" +
                         std::to_string(target.width()));
    }
}
}  // namespace

ag::Var bce_loss(const ag::Var& logits, const BinaryMask& target) {
    check_mask_shape(logits, target);
    return ag::bce_with_logits(logits, target.bits());
}

ag::Var dice_loss(const ag::Var& logits, const BinaryMask& target) {
    check_mask_shape(logits, target);
    return ag::soft_dice(logits, target.bits(), kDiceEpsilon);
}

LossBreakdown total_loss(double text_ce_value, const std::vector<MaskTerm>& masks, const LossWeights& w) {
    LossBreakdown out;
    out.text = text_ce_value;
    out.n_masks = static_cast<int>(masks.size());
    double mask_term = 0.0;
    if (!masks.empty()) {
        for (const auto& m : masks) {
            out.bce += m.bce;
            out.dice += m.dice;
            mask_term += w.bce * m.bce + w.dice * m.dice;
        }
        const double k = static_cast<double>(masks.size());
        out.bce /= k;
        out.dice /= k;
        mask_term /= k;
    }
    out.total = w.text * text_ce_value + w.mask * mask_term;
    return out;
}

ag::Var total_loss(const ag::Var& text_ce_value, std::span<const ag::Var> bce, std::span<const ag::Var> dice,
                   const LossWeights& w) {
    if (bce.size() != dice.size()) throw UsageError("total_loss: bce and dice counts differ");
    ag::Var total = ag::scale(text_ce_value, w.text);
    if (bce.empty()) return total;
    const double per_mask = w.mask / static_cast<double>(bce.size());
    for (std::size_t i = 0; i < bce.size(); ++i) {
        ag::Var term = ag::add(ag::scale(bce[i], w.bce), ag::scale(dice[i], w.dice));
        total = ag::add(total, ag::scale(term, per_mask));
    }
    return total;
}

}  // namespace seglm
