#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace seglm {

/// Row-major H×W×C image with values in [0, 1].
class Image {
  public:
    Image() = default;
    Image(int height, int width, int channels = 3);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }

    double& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
    double at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }
    const std::vector<double>& pixels() const { return pixels_; }
    std::vector<double>& pixels() { return pixels_; }

    /// Throws DataError unless values lie in [0,1] and both sides are ≥ 8 and
    /// divisible by patch_size.
    void validate(int patch_size) const;

    bool operator==(const Image&) const = default;

  private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }
    int height_ = 0;
    int width_ = 0;
    int channels_ = 3;
    std::vector<double> pixels_;
};

class BinaryMask {
  public:
    BinaryMask() = default;
    BinaryMask(int height, int width);

    int height() const { return height_; }
    int width() const { return width_; }
    std::uint8_t& at(int y, int x) { return bits_[static_cast<std::size_t>(y) * width_ + x]; }
    std::uint8_t at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x]; }
    const std::vector<std::uint8_t>& bits() const { return bits_; }
    std::vector<std::uint8_t>& bits() { return bits_; }
    std::size_t count() const;

    BinaryMask operator|(const BinaryMask& other) const;
    bool operator==(const BinaryMask&) const = default;

  private:
    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> bits_;
};

enum class SampleKind { semantic, referring, reasoning, vqa };
/// How the query is phrased; evaluation reports are grouped by this.
enum class Phrasing { short_phrase, long_sentence };

std::string_view to_string(SampleKind kind);
SampleKind sample_kind_from_string(std::string_view s);
std::string_view to_string(Phrasing p);
Phrasing phrasing_from_string(std::string_view s);

inline constexpr std::string_view kSegLiteral = "<SEG>";
std::size_t count_seg_literals(std::string_view text);

struct Sample {
    std::string id;
    Image image;
    std::string instruction;
    std::string answer_text;
    std::vector<BinaryMask> target_masks;
    SampleKind kind = SampleKind::semantic;
    Phrasing phrasing = Phrasing::short_phrase;

    /// Checks the kind/mask and <SEG>-count invariants plus mask shapes.
    void validate(int patch_size = 8) const;

    /// Samples sharing an image carry ids "<scene>-<suffix>".
    std::string scene_key() const;

    bool operator==(const Sample&) const = default;
};

enum class SplitName { train, val, test };
std::string_view to_string(SplitName s);
SplitName split_name_from_string(std::string_view s);

struct DatasetSplit {
    SplitName name = SplitName::train;
    std::vector<Sample> samples;

    void validate(int patch_size = 8) const;
    bool operator==(const DatasetSplit&) const = default;
};

/// Throws DataError if any sample id occurs in more than one split.
void check_disjoint(const std::vector<const DatasetSplit*>& splits);

/// 8-bit RGB PNG; gray and palette files are expanded.
Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);

/// Directory layout: manifest.jsonl, images/<id>.png, masks/<id>_<k>.png.
DatasetSplit load_dataset(const std::filesystem::path& dir, int patch_size = 8);
void save_dataset(const DatasetSplit& split, const std::filesystem::path& dir);

}  // namespace seglm
