#pragma once

// Procedural desk-scale scenes of flat-colored shapes, and the question /
// answer templates that turn them into semantic, referring, reasoning and
// VQA samples.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seglm/datamodel.hpp"

namespace seglm::synth {

enum class Shape { circle, square, triangle };
enum class Color { red, green, blue, yellow };
enum class Size { small, large };

inline constexpr std::array kShapes{Shape::circle, Shape::square, Shape::triangle};
inline constexpr std::array kColors{Color::red, Color::green, Color::blue, Color::yellow};

std::string to_string(Shape s);
std::string to_string(Color c);
std::string to_string(Size s);

struct SceneObject {
    Shape shape = Shape::circle;
    Color color = Color::red;
    Size size = Size::small;
    double cx = 0.0;
    double cy = 0.0;
    double extent = 0.0;  // radius / half side; the shape fits in [c - extent, c + extent]

    /// Exact point-in-shape test at continuous coordinates.
    bool contains(double x, double y) const;
    /// Mask sampled at pixel centers.
    BinaryMask mask(int height, int width) const;

    bool can_roll() const { return shape == Shape::circle; }
    bool stackable() const { return shape == Shape::square; }
    bool grass_colored() const { return color == Color::green; }
    bool sky_colored() const { return color == Color::blue; }
};

struct Scene {
    std::uint64_t seed = 0;
    Image image;
    std::vector<SceneObject> objects;
    std::vector<std::size_t> areas;  // pixel count per object

    BinaryMask mask_of(std::size_t object) const;
    BinaryMask union_mask(const std::vector<std::size_t>& objects) const;
};

/// RGB triple (bytes / 255) used when painting a color.
std::array<double, 3> rgb(Color c);
std::array<double, 3> background_rgb();

/// Deterministic in the seed. Throws DataError naming the seed when the
/// objects cannot be placed without overlap within the retry budget.
Scene generate_scene(std::uint64_t seed, int n_objects, int height = 64, int width = 64);

// Queries -------------------------------------------------------------------

/// World-knowledge and attribute facts with machine-checkable ground truth.
enum class Fact { can_roll, stackable, grass_color, sky_color, largest, smallest, leftmost, rightmost };
inline constexpr std::array kFacts{Fact::can_roll, Fact::stackable, Fact::grass_color, Fact::sky_color,
                                   Fact::largest,  Fact::smallest,  Fact::leftmost,    Fact::rightmost};

enum class QueryKind { explicit_ref, attribute_reasoning, knowledge_reasoning };

/// Selects objects by explicit attributes, or by a single fact.
struct Predicate {
    std::optional<Shape> shape;
    std::optional<Color> color;
    std::optional<Size> size;
    std::optional<Fact> fact;

    std::vector<std::size_t> select(const Scene& scene) const;
    /// "the large red circle" for explicit predicates.
    std::string describe() const;
};

/// Inverse of Predicate::describe for explicit descriptions.
Predicate parse_description(const std::string& text);

struct QuerySpec {
    QueryKind kind = QueryKind::explicit_ref;
    Phrasing phrasing = Phrasing::short_phrase;
    Predicate target;
};

QueryKind kind_of(Fact f);
std::string short_phrase(Fact f);
std::string long_sentence(Fact f);

/// Number of distinct semantic question/answer templates.
int semantic_template_count();
int referring_template_count();

Sample make_semantic_sample(const Scene& scene, const std::string& class_name, int template_id, std::string id);
Sample make_referring_sample(const Scene& scene, const QuerySpec& query, std::string id, int template_id = 0);
/// Two explicit targets in one question; the answer carries two <SEG> tokens.
Sample make_multi_referring_sample(const Scene& scene, const QuerySpec& first, const QuerySpec& second,
                                   std::string id);
Sample make_reasoning_sample(const Scene& scene, const QuerySpec& query, std::string id);
/// question_type selects among count / color / shape / color-count questions;
/// unanswerable types fall through to the object count question.
Sample make_vqa_sample(const Scene& scene, std::string id, int question_type = 0);

/// Class names present in the scene (shape names, then color names).
std::vector<std::string> class_names(const Scene& scene);
/// Shortest attribute description that selects exactly object i, if any.
std::optional<Predicate> unique_description(const Scene& scene, std::size_t i);

// Corpus --------------------------------------------------------------------

struct CorpusSizes {
    int semantic = 100;
    int referring = 100;
    int vqa = 50;
    int reasoning = 100;  // reasoning samples shared by the val and test splits
};

struct CorpusOptions {
    std::array<double, 3> split_fractions{0.8, 0.1, 0.1};  // train / val / test
    bool reasoning_in_train = false;  // false mirrors the zero-shot protocol
    int reasoning_finetune = 0;       // size of the separate reasoning fine-tune set
    int max_categories_per_image = 3;
    double multi_target_fraction = 0.1;  // share of referring samples with two targets
    int image_size = 64;
};

struct Corpus {
    DatasetSplit train;
    DatasetSplit val;
    DatasetSplit test;
    DatasetSplit reasoning_finetune;  // named "train"; disjoint scenes from all others
};

Corpus build_corpus(std::uint64_t seed, const CorpusSizes& sizes, const CorpusOptions& options = {});

/// Every instruction and answer string the templates can produce (used to
/// build the closed vocabulary).
std::vector<std::string> template_strings();

}  // namespace seglm::synth
