#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seglm/datamodel.hpp"

namespace seglm {

class SegModel;

struct MaskScore {
    std::int64_t intersection = 0;
    std::int64_t union_ = 0;
    double iou = 0.0;
};

/// Exact pixel counts; empty-vs-empty scores 1.
MaskScore mask_iou(const BinaryMask& pred, const BinaryMask& gt);

struct EvalRecord {
    std::string sample_id;
    SampleKind kind = SampleKind::reasoning;
    Phrasing phrasing = Phrasing::short_phrase;
    std::vector<MaskScore> masks;  // one per ground-truth mask
    std::string predicted_text;
    bool text_match = false;
    int predicted_masks = 0;

    /// Mean over this image's masks.
    double image_iou() const;
};

/// Mean of per-image IoUs. Throws UsageError on an empty list.
double giou(std::span<const EvalRecord> records);
/// Summed intersections over summed unions. Throws UsageError if the union is 0.
double ciou(std::span<const EvalRecord> records);

struct EvalRow {
    std::string label;
    int count = 0;
    double giou = 0.0;
    double ciou = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;  // short query, long query, overall
    std::vector<EvalRecord> records;

    const EvalRow& row(const std::string& label) const;
    nlohmann::json to_json() const;
    std::string table() const;
};

/// Groups records by phrasing into the three report rows. Empty groups are
/// reported with count 0 and zero scores.
EvalReport make_report(std::vector<EvalRecord> records);

struct EvalOptions {
    bool oracle = false;  // score the ground truth against itself
    int max_new = -1;     // generation budget, model default if negative
    int threads = 1;
};

/// Generates an answer per sample, decodes its masks and pairs them with the
/// ground truth in order. Missing masks score 0; samples without ground-truth
/// masks are left out.
EvalReport evaluate(const SegModel& model, const DatasetSplit& split, const EvalOptions& options = {});

/// Expected gIoU of masks whose pixels are independent fair coin flips,
/// estimated with `trials` draws per mask.
double random_baseline_giou(const DatasetSplit& split, int trials, std::uint64_t seed);

}  // namespace seglm
