#include "seglm/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <iomanip>
#include <random>
#include <sstream>
#include <thread>

#include "seglm/errors.hpp"
#include "seglm/model.hpp"
#include "seglm/tokenizer.hpp"

namespace seglm {

MaskScore mask_iou(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) {
        throw UsageError("mask_iou: shape mismatch");
    }
    MaskScore s;
    const auto& a = pred.bits();
    const auto& b = gt.bits();
    for (std::size_t i = 0; i < a.size(); ++i) {
        s.intersection += a[i] & b[i];
        s.union_ += a[i] | b[i];
    }
    s.iou = s.union_ == 0 ? 1.0 : static_cast<double>(s.intersection) / static_cast<double>(s.union_);
    return s;
}

double EvalRecord::image_iou() const {
    if (masks.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& m : masks) sum += m.iou;
    return sum / static_cast<double>(masks.size());
}

double giou(std::span<const EvalRecord> records) {
    if (records.empty()) throw UsageError("giou of an empty record list");
    double sum = 0.0;
    for (const auto& r : records) sum += r.image_iou();
    return sum / static_cast<double>(records.size());
}

double ciou(std::span<const EvalRecord> records) {
    std::int64_t inter = 0, uni = 0;
    for (const auto& r : records) {
        for (const auto& m : r.masks) {
            inter += m.intersection;
            uni += m.union_;
        }
    }
    if (uni == 0) throw UsageError("ciou with zero cumulative union");
    return static_cast<double>(inter) / static_cast<double>(uni);
}

const EvalRow& EvalReport::row(const std::string& label) const {
    for (const auto& r : rows) {
        if (r.label == label) return r;
    }
    throw UsageError("no report row '" + label + "'");
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
        j["rows"].push_back({{"label", r.label}, {"count", r.count}, {"giou", r.giou}, {"ciou", r.ciou}});
    }
    return j;
}

std::string EvalReport::table() const {
    std::ostringstream out;
    out << std::left << std::setw(14) << "" << std::right << std::setw(8) << "count" << std::setw(10) << "gIoU"
        << std::setw(10) << "cIoU" << '\n';
    out << std::fixed << std::setprecision(4);
    for (const auto& r : rows) {
        out << std::left << std::setw(14) << r.label << std::right << std::setw(8) << r.count << std::setw(10)
            << r.giou << std::setw(10) << r.ciou << '\n';
    }
    return out.str();
}

EvalReport make_report(std::vector<EvalRecord> records) {
    EvalReport report;
    auto row_for = [](const std::string& label, const std::vector<EvalRecord>& rs) {
        EvalRow row{label, static_cast<int>(rs.size()), 0.0, 0.0};
        if (!rs.empty()) {
            row.giou = giou(rs);
            bool any_union = false;
            for (const auto& r : rs) {
                for (const auto& m : r.masks) any_union = any_union || m.union_ > 0;
            }
            row.ciou = any_union ? ciou(rs) : 1.0;
        }
        return row;
    };
    std::vector<EvalRecord> shorts, longs;
    for (const auto& r : records) (r.phrasing == Phrasing::short_phrase ? shorts : longs).push_back(r);
    report.rows.push_back(row_for("short query", shorts));
    report.rows.push_back(row_for("long query", longs));
    report.rows.push_back(row_for("overall", records));
    report.records = std::move(records);
    return report;
}

EvalReport evaluate(const SegModel& model, const DatasetSplit& split, const EvalOptions& options) {
    std::vector<const Sample*> samples;
    for (const auto& s : split.samples) {
        if (!s.target_masks.empty()) samples.push_back(&s);
    }
    std::vector<EvalRecord> records(samples.size());

    auto score = [&](std::size_t i) {
        const Sample& s = *samples[i];
        EvalRecord& r = records[i];
        r.sample_id = s.id;
        r.kind = s.kind;
        r.phrasing = s.phrasing;
        std::vector<BinaryMask> predicted;
        if (options.oracle) {
            predicted = s.target_masks;
            r.predicted_text = normalize(s.answer_text);
        } else {
            Prediction p = model.predict(s.image, s.instruction, options.max_new);
            predicted = std::move(p.masks);
            r.predicted_text = std::move(p.text);
        }
        r.text_match = r.predicted_text == normalize(s.answer_text);
        r.predicted_masks = static_cast<int>(predicted.size());
        for (std::size_t k = 0; k < s.target_masks.size(); ++k) {
            if (k < predicted.size()) {
                r.masks.push_back(mask_iou(predicted[k], s.target_masks[k]));
            } else {
                r.masks.push_back({0, static_cast<std::int64_t>(s.target_masks[k].count()), 0.0});
            }
        }
    };

    const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(samples.size())));
    if (threads == 1) {
        for (std::size_t i = 0; i < samples.size(); ++i) score(i);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t i = static_cast<std::size_t>(t); i < samples.size(); i += threads) score(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(t)] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    return make_report(std::move(records));
}

double random_baseline_giou(const DatasetSplit& split, int trials, std::uint64_t seed) {
    if (trials < 1) throw UsageError("trials must be positive");
    std::mt19937_64 rng(seed);
    double sum = 0.0;
    int images = 0;
    for (const auto& s : split.samples) {
        if (s.target_masks.empty()) continue;
        double image = 0.0;
        for (const auto& m : s.target_masks) {
            const auto area = static_cast<std::int64_t>(m.count());
            const auto rest = static_cast<std::int64_t>(m.bits().size()) - area;
            std::binomial_distribution<std::int64_t> hit(area, 0.5), extra(rest, 0.5);
            double acc = 0.0;
            for (int t = 0; t < trials; ++t) {
                const std::int64_t i = hit(rng);
                const std::int64_t u = area + extra(rng);
                acc += u == 0 ? 1.0 : static_cast<double>(i) / static_cast<double>(u);
            }
            image += acc / trials;
        }
        sum += image / static_cast<double>(s.target_masks.size());
        ++images;
    }
    if (images == 0) throw UsageError("no masked samples for the random baseline");
    return sum / images;
}

}  // namespace seglm
