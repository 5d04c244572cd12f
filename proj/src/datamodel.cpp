#include "seglm/datamodel.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include "seglm/errors.hpp"
#include "seglm/png_io.hpp"

namespace seglm {

namespace fs = std::filesystem;
using nlohmann::json;

Image::Image(int height, int width, int channels)
    : height_(height), width_(width), channels_(channels),
      pixels_(static_cast<std::size_t>(height) * width * channels, 0.0) {}

void Image::validate(int patch_size) const {
    if (channels_ != 3) throw DataError("image must have 3 channels");
    if (height_ < 8 || width_ < 8) throw DataError("image smaller than 8x8");
    if (height_ % patch_size != 0 || width_ % patch_size != 0) {
        throw DataError("image size " + std::to_string(height_) + "x" + std::to_string(width_) +
                        " not divisible by patch size " + std::to_string(patch_size));
    }
    for (double v : pixels_) {
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("pixel value outside [0,1]");
    }
}

BinaryMask::BinaryMask(int height, int width)
    : height_(height), width_(width), bits_(static_cast<std::size_t>(height) * width, 0) {}

std::size_t BinaryMask::count() const {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
}

BinaryMask BinaryMask::operator|(const BinaryMask& other) const {
    if (other.height_ != height_ || other.width_ != width_) throw UsageError("mask union: shape mismatch");
    BinaryMask out(height_, width_);
    for (std::size_t i = 0; i < bits_.size(); ++i) out.bits_[i] = bits_[i] | other.bits_[i];
    return out;
}

std::string_view to_string(SampleKind kind) {
    switch (kind) {
        case SampleKind::semantic: return "semantic";
        case SampleKind::referring: return "referring";
        case SampleKind::reasoning: return "reasoning";
        case SampleKind::vqa: return "vqa";
    }
    return "?";
}

SampleKind sample_kind_from_string(std::string_view s) {
    if (s == "semantic") return SampleKind::semantic;
    if (s == "referring") return SampleKind::referring;
    if (s == "reasoning") return SampleKind::reasoning;
    if (s == "vqa") return SampleKind::vqa;
    throw DataError("unknown sample kind '" + std::string(s) + "'");
}

std::string_view to_string(Phrasing p) { return p == Phrasing::short_phrase ? "short" : "long"; }

Phrasing phrasing_from_string(std::string_view s) {
    if (s == "short") return Phrasing::short_phrase;
    if (s == "long") return Phrasing::long_sentence;
    throw DataError("unknown phrasing '" + std::string(s) + "'");
}

std::string_view to_string(SplitName s) {
    switch (s) {
        case SplitName::train: return "train";
        case SplitName::val: return "val";
        case SplitName::test: return "test";
    }
    return "?";
}

SplitName split_name_from_string(std::string_view s) {
    if (s == "train") return SplitName::train;
    if (s == "val") return SplitName::val;
    if (s == "test") return SplitName::test;
    throw DataError("unknown split name '" + std::string(s) + "'");
}

std::size_t count_seg_literals(std::string_view text) {
    std::size_t n = 0;
    for (auto pos = text.find(kSegLiteral); pos != std::string_view::npos; pos = text.find(kSegLiteral, pos + 1)) ++n;
    return n;
}

void Sample::validate(int patch_size) const {
    auto fail = [this](const std::string& what) { throw DataError("sample '" + id + "': " + what); };
    if (id.empty()) throw DataError("sample with empty id");
    try {
        image.validate(patch_size);
    } catch (const DataError& e) {
        fail(e.what());
    }
    if (kind == SampleKind::vqa && !target_masks.empty()) fail("vqa sample must have no masks");
    if (kind != SampleKind::vqa && target_masks.empty()) fail("segmentation sample without masks");
    if (count_seg_literals(answer_text) != target_masks.size()) {
        fail("answer has " + std::to_string(count_seg_literals(answer_text)) + " <SEG> tokens but " +
             std::to_string(target_masks.size()) + " masks");
    }
    for (const auto& m : target_masks) {
        if (m.height() != image.height() || m.width() != image.width()) fail("mask shape mismatch");
        for (auto b : m.bits()) {
            if (b > 1) fail("non-binary mask");
        }
    }
}

std::string Sample::scene_key() const {
    const auto dash = id.find('-');
    return dash == std::string::npos ? id : id.substr(0, dash);
}

void DatasetSplit::validate(int patch_size) const {
    std::unordered_set<std::string> seen;
    for (const auto& s : samples) {
        s.validate(patch_size);
        if (!seen.insert(s.id).second) throw DataError("sample '" + s.id + "': duplicate id");
    }
}

void check_disjoint(const std::vector<const DatasetSplit*>& splits) {
    std::unordered_set<std::string> seen;
    for (const auto* split : splits) {
        for (const auto& s : split->samples) {
            if (!seen.insert(s.id).second) throw DataError("sample '" + s.id + "': id appears in two splits");
        }
    }
}

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(v * 255.0)); }

Image image_from_raster(const png::Raster& r) {
    if (r.channels != 3) throw DataError("expected RGB image");
    Image img(r.height, r.width, 3);
    for (std::size_t i = 0; i < r.data.size(); ++i) img.pixels()[i] = r.data[i] / 255.0;
    return img;
}

png::Raster raster_from_image(const Image& img) {
    png::Raster r{img.width(), img.height(), 3, {}};
    r.data.reserve(img.pixels().size());
    for (double v : img.pixels()) r.data.push_back(to_byte(v));
    return r;
}

std::string mask_file(const std::string& id, std::size_t k) { return "masks/" + id + "_" + std::to_string(k) + ".png"; }

}  // namespace

Image read_image(const fs::path& path) {
    png::Raster r = png::read(path);
    if (r.channels == 1) {
        std::vector<std::uint8_t> rgb;
        rgb.reserve(r.data.size() * 3);
        for (auto v : r.data) rgb.insert(rgb.end(), 3, v);
        r.data = std::move(rgb);
        r.channels = 3;
    }
    return image_from_raster(r);
}

void write_image(const fs::path& path, const Image& image) { png::write(path, raster_from_image(image)); }

DatasetSplit load_dataset(const fs::path& dir, int patch_size) {
    const fs::path manifest = dir / "manifest.jsonl";
    std::ifstream in(manifest);
    if (!in) throw DataError("missing manifest " + manifest.string());
    DatasetSplit split;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (rec.contains("split")) split.name = split_name_from_string(rec.at("split").get<std::string>());
        Sample s;
        try {
            s.id = rec.at("id").get<std::string>();
            s.instruction = rec.at("instruction").get<std::string>();
            s.answer_text = rec.at("answer_text").get<std::string>();
            s.kind = sample_kind_from_string(rec.at("kind").get<std::string>());
            s.phrasing = phrasing_from_string(rec.value("phrasing", std::string("short")));
        } catch (const json::exception& e) {
            throw DataError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        auto fail = [&s](const std::string& what) { throw DataError("sample '" + s.id + "': " + what); };
        if (!seen.insert(s.id).second) fail("duplicate id");

        const fs::path image_path = dir / rec.at("image").get<std::string>();
        if (!fs::exists(image_path)) fail("missing file " + image_path.string());
        try {
            s.image = image_from_raster(png::read(image_path));
        } catch (const DataError& e) {
            fail(e.what());
        }
        for (const auto& m : rec.value("masks", json::array())) {
            const fs::path mask_path = dir / m.get<std::string>();
            if (!fs::exists(mask_path)) fail("missing file " + mask_path.string());
            png::Raster r;
            try {
                r = png::read(mask_path);
            } catch (const DataError& e) {
                fail(e.what());
            }
            if (r.channels != 1) fail("mask must be single-channel: " + mask_path.string());
            if (r.width != s.image.width() || r.height != s.image.height()) fail("mask shape mismatch");
            BinaryMask mask(r.height, r.width);
            for (std::size_t i = 0; i < r.data.size(); ++i) {
                if (r.data[i] == 0) {
                    mask.bits()[i] = 0;
                } else if (r.data[i] == 255) {
                    mask.bits()[i] = 1;
                } else {
                    fail("non-binary mask value " + std::to_string(r.data[i]) + " in " + mask_path.string());
                }
            }
            s.target_masks.push_back(std::move(mask));
        }
        s.validate(patch_size);
        split.samples.push_back(std::move(s));
    }
    return split;
}

void save_dataset(const DatasetSplit& split, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    fs::create_directories(dir / "masks", ec);
    if (ec) throw DataError("cannot create dataset directory " + dir.string() + ": " + ec.message());
    std::ofstream out(dir / "manifest.jsonl", std::ios::trunc);
    if (!out) throw DataError("cannot write manifest in " + dir.string());
    for (const auto& s : split.samples) {
        json rec;
        rec["id"] = s.id;
        rec["split"] = std::string(to_string(split.name));
        rec["kind"] = std::string(to_string(s.kind));
        rec["phrasing"] = std::string(to_string(s.phrasing));
        rec["instruction"] = s.instruction;
        rec["answer_text"] = s.answer_text;
        rec["image"] = "images/" + s.id + ".png";
        json masks = json::array();
        png::write(dir / "images" / (s.id + ".png"), raster_from_image(s.image));
        for (std::size_t k = 0; k < s.target_masks.size(); ++k) {
            const auto& m = s.target_masks[k];
            png::Raster r{m.width(), m.height(), 1, {}};
            r.data.reserve(m.bits().size());
            for (auto b : m.bits()) r.data.push_back(b ? 255 : 0);
            png::write(dir / mask_file(s.id, k), r);
            masks.push_back(mask_file(s.id, k));
        }
        rec["masks"] = std::move(masks);
        out << rec.dump() << '\n';
    }
    if (!out) throw DataError("failed writing manifest in " + dir.string());
}

}  // namespace seglm
