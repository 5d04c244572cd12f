#include "seglm/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "seglm/errors.hpp"

namespace seglm::synth {

std::string to_string(Shape s) {
    switch (s) {
        case Shape::circle: return "circle";
        case Shape::square: return "square";
        case Shape::triangle: return "triangle";
    }
    return "?";
}

std::string to_string(Color c) {
    switch (c) {
        case Color::red: return "red";
        case Color::green: return "green";
        case Color::blue: return "blue";
        case Color::yellow: return "yellow";
    }
    return "?";
}

std::string to_string(Size s) { return s == Size::small ? "small" : "large"; }

std::array<double, 3> rgb(Color c) {
    switch (c) {
        case Color::red: return {230 / 255.0, 40 / 255.0, 40 / 255.0};
        case Color::green: return {40 / 255.0, 200 / 255.0, 60 / 255.0};
        case Color::blue: return {40 / 255.0, 80 / 255.0, 230 / 255.0};
        case Color::yellow: return {240 / 255.0, 220 / 255.0, 40 / 255.0};
    }
    return {0, 0, 0};
}

std::array<double, 3> background_rgb() { return {128 / 255.0, 128 / 255.0, 128 / 255.0}; }

bool SceneObject::contains(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    switch (shape) {
        case Shape::circle: return dx * dx + dy * dy <= extent * extent;
        case Shape::square: return std::abs(dx) <= extent && std::abs(dy) <= extent;
        case Shape::triangle:
            // Apex at (cx, cy - extent), base from (cx ± extent, cy + extent).
            return dy <= extent && std::abs(dx) <= (dy + extent) / 2.0;
    }
    return false;
}

BinaryMask SceneObject::mask(int height, int width) const {
    BinaryMask m(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) m.at(y, x) = contains(x + 0.5, y + 0.5) ? 1 : 0;
    }
    return m;
}

BinaryMask Scene::mask_of(std::size_t object) const {
    return objects.at(object).mask(image.height(), image.width());
}

BinaryMask Scene::union_mask(const std::vector<std::size_t>& selected) const {
    BinaryMask m(image.height(), image.width());
    for (auto i : selected) m = m | mask_of(i);
    return m;
}

namespace {

constexpr int kPlacementRetries = 200;
constexpr double kGap = 2.0;

bool separated(const SceneObject& a, const SceneObject& b) {
    const double need = a.extent + b.extent + kGap;
    return std::abs(a.cx - b.cx) >= need || std::abs(a.cy - b.cy) >= need;
}

std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

Scene generate_scene(std::uint64_t seed, int n_objects, int height, int width) {
    if (n_objects < 1) throw UsageError("generate_scene: n_objects must be >= 1");
    if (height < 8 || width < 8) throw UsageError("generate_scene: image too small");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick_shape(0, 2);
    std::uniform_int_distribution<int> pick_color(0, 3);
    std::bernoulli_distribution pick_large(0.5);
    // Extents scale with the image so small test images stay placeable.
    const double unit = std::min(height, width) / 64.0;
    std::uniform_real_distribution<double> small_extent(5.0 * unit, 7.0 * unit);
    std::uniform_real_distribution<double> large_extent(10.0 * unit, 13.0 * unit);

    Scene scene;
    scene.seed = seed;
    for (int i = 0; i < n_objects; ++i) {
        SceneObject obj;
        obj.shape = kShapes[static_cast<std::size_t>(pick_shape(rng))];
        obj.color = kColors[static_cast<std::size_t>(pick_color(rng))];
        obj.size = pick_large(rng) ? Size::large : Size::small;
        obj.extent = obj.size == Size::large ? large_extent(rng) : small_extent(rng);
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
            const double lo = obj.extent + 1.0;
            if (width - lo <= lo || height - lo <= lo) break;
            std::uniform_real_distribution<double> px(lo, width - lo);
            std::uniform_real_distribution<double> py(lo, height - lo);
            obj.cx = px(rng);
            obj.cy = py(rng);
            placed = std::all_of(scene.objects.begin(), scene.objects.end(),
                                 [&](const SceneObject& other) { return separated(obj, other); });
        }
        if (!placed) {
            throw DataError("generate_scene: cannot place " + std::to_string(n_objects) + " objects for seed " +
                            std::to_string(seed));
        }
        scene.objects.push_back(obj);
    }

    scene.image = Image(height, width, 3);
    const auto bg = background_rgb();
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            auto color = bg;
            for (const auto& obj : scene.objects) {
                if (obj.contains(x + 0.5, y + 0.5)) color = rgb(obj.color);
            }
            for (int c = 0; c < 3; ++c) scene.image.at(y, x, c) = color[static_cast<std::size_t>(c)];
        }
    }
    for (std::size_t i = 0; i < scene.objects.size(); ++i) scene.areas.push_back(scene.mask_of(i).count());
    return scene;
}

// Queries -------------------------------------------------------------------

QueryKind kind_of(Fact f) {
    switch (f) {
        case Fact::largest:
        case Fact::smallest:
        case Fact::leftmost:
        case Fact::rightmost: return QueryKind::attribute_reasoning;
        default: return QueryKind::knowledge_reasoning;
    }
}

std::string short_phrase(Fact f) {
    switch (f) {
        case Fact::can_roll: return "the object that can roll";
        case Fact::stackable: return "the object that is easy to stack";
        case Fact::grass_color: return "the object with the color of grass";
        case Fact::sky_color: return "the object with the color of the sky";
        case Fact::largest: return "the largest object";
        case Fact::smallest: return "the smallest object";
        case Fact::leftmost: return "the object nearest the left edge";
        case Fact::rightmost: return "the object nearest the right edge";
    }
    return "";
}

std::string long_sentence(Fact f) {
    switch (f) {
        case Fact::can_roll:
            return "If I pushed each object gently on a slope, which one would keep moving on its own?";
        case Fact::stackable:
            return "If I wanted to build a stable tower from copies of one object, which object should I use?";
        case Fact::grass_color: return "Which object has the same color as fresh grass in a summer garden?";
        case Fact::sky_color: return "Which object has the same color as the clear sky on a sunny day?";
        case Fact::largest: return "Which object would cover the most space on the table if we looked from above?";
        case Fact::smallest: return "Which object would be the easiest to hide inside a closed hand?";
        case Fact::leftmost: return "If I walked into the picture from the left side, which object would I reach first?";
        case Fact::rightmost:
            return "If I walked into the picture from the right side, which object would I reach first?";
    }
    return "";
}

std::vector<std::size_t> Predicate::select(const Scene& scene) const {
    std::vector<std::size_t> out;
    const auto& objs = scene.objects;
    if (fact) {
        auto argbest = [&](auto better) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < objs.size(); ++i) {
                if (better(i, best)) best = i;
            }
            // Ties make extremal facts ambiguous; report every tied object.
            for (std::size_t i = 0; i < objs.size(); ++i) {
                if (i == best || (!better(i, best) && !better(best, i))) out.push_back(i);
            }
        };
        switch (*fact) {
            case Fact::can_roll:
            case Fact::stackable:
            case Fact::grass_color:
            case Fact::sky_color:
                for (std::size_t i = 0; i < objs.size(); ++i) {
                    const auto& o = objs[i];
                    const bool hit = (*fact == Fact::can_roll && o.can_roll()) ||
                                     (*fact == Fact::stackable && o.stackable()) ||
                                     (*fact == Fact::grass_color && o.grass_colored()) ||
                                     (*fact == Fact::sky_color && o.sky_colored());
                    if (hit) out.push_back(i);
                }
                break;
            case Fact::largest:
                argbest([&](std::size_t a, std::size_t b) { return scene.areas[a] > scene.areas[b]; });
                break;
            case Fact::smallest:
                argbest([&](std::size_t a, std::size_t b) { return scene.areas[a] < scene.areas[b]; });
                break;
            case Fact::leftmost:
                argbest([&](std::size_t a, std::size_t b) { return objs[a].cx < objs[b].cx; });
                break;
            case Fact::rightmost:
                argbest([&](std::size_t a, std::size_t b) { return objs[a].cx > objs[b].cx; });
                break;
        }
        return out;
    }
    for (std::size_t i = 0; i < objs.size(); ++i) {
        const auto& o = objs[i];
        if (shape && o.shape != *shape) continue;
        if (color && o.color != *color) continue;
        if (size && o.size != *size) continue;
        out.push_back(i);
    }
    return out;
}

std::string Predicate::describe() const {
    if (fact) return short_phrase(*fact);
    std::string s = "the";
    if (size) s += " " + to_string(*size);
    if (color) s += " " + to_string(*color);
    s += " " + (shape ? to_string(*shape) : std::string("object"));
    return s;
}

Predicate parse_description(const std::string& text) {
    std::istringstream in(text);
    std::string word;
    Predicate p;
    bool noun = false;
    while (in >> word) {
        if (word == "the") continue;
        if (word == "small") {
            p.size = Size::small;
        } else if (word == "large") {
            p.size = Size::large;
        } else if (word == "object") {
            noun = true;
        } else {
            bool matched = false;
            for (auto c : kColors) {
                if (word == to_string(c)) {
                    p.color = c;
                    matched = true;
                }
            }
            for (auto s : kShapes) {
                if (word == to_string(s)) {
                    p.shape = s;
                    matched = noun = true;
                }
            }
            if (!matched) throw UsageError("unparseable description word '" + word + "'");
        }
    }
    if (!noun) throw UsageError("description lacks a noun: '" + text + "'");
    return p;
}

namespace {

struct QaTemplate {
    const char* question;
    const char* answer;
};

constexpr std::array<QaTemplate, 4> kSemanticTemplates{{
    {"Can you segment the {} in this image?", "It is <SEG>."},
    {"What is the {} in this image? Please respond with segmentation mask.", "Sure, <SEG>."},
    {"Please segment the {} in this image.", "Sure, it is <SEG>."},
    {"What is the {} in this image? Please output segmentation mask.", "<SEG>."},
}};

constexpr std::array<const char*, 3> kReferringQuestions{{
    "Can you segment {} in this image?",
    "Please segment {} in this image.",
    "Where is {} in this image? Please output segmentation mask.",
}};
constexpr const char* kReferringAnswer = "Sure, it is <SEG>.";
constexpr const char* kMultiQuestion = "Can you segment {} and {} in this image?";
constexpr const char* kMultiAnswer = "Sure, they are <SEG> and <SEG>.";
constexpr const char* kReasoningShort = "Can you segment {} in this image?";
constexpr const char* kReasoningLong = "{} Please segment it.";
constexpr const char* kReasoningAnswer = "Sure, it is <SEG>.";

std::string fill(std::string pattern, const std::vector<std::string>& values) {
    for (const auto& v : values) {
        const auto pos = pattern.find("{}");
        if (pos == std::string::npos) break;
        pattern.replace(pos, 2, v);
    }
    return pattern;
}

std::optional<Shape> shape_named(const std::string& name) {
    for (auto s : kShapes) {
        if (to_string(s) == name) return s;
    }
    return std::nullopt;
}

std::optional<Color> color_named(const std::string& name) {
    for (auto c : kColors) {
        if (to_string(c) == name) return c;
    }
    return std::nullopt;
}

Predicate class_predicate(const std::string& class_name) {
    Predicate p;
    if (auto s = shape_named(class_name)) {
        p.shape = s;
    } else if (auto c = color_named(class_name)) {
        p.color = c;
    } else {
        throw DataError("unknown class '" + class_name + "'");
    }
    return p;
}

Sample base_sample(const Scene& scene, std::string id, SampleKind kind) {
    Sample s;
    s.id = std::move(id);
    s.image = scene.image;
    s.kind = kind;
    return s;
}

}  // namespace

int semantic_template_count() { return static_cast<int>(kSemanticTemplates.size()); }
int referring_template_count() { return static_cast<int>(kReferringQuestions.size()); }

std::vector<std::string> class_names(const Scene& scene) {
    std::vector<std::string> out;
    for (auto s : kShapes) {
        for (const auto& o : scene.objects) {
            if (o.shape == s) {
                out.push_back(to_string(s));
                break;
            }
        }
    }
    for (auto c : kColors) {
        for (const auto& o : scene.objects) {
            if (o.color == c) {
                out.push_back(to_string(c));
                break;
            }
        }
    }
    return out;
}

Sample make_semantic_sample(const Scene& scene, const std::string& class_name, int template_id, std::string id) {
    if (template_id < 0 || template_id >= semantic_template_count()) throw UsageError("semantic template out of range");
    Predicate p;
    try {
        p = class_predicate(class_name);
    } catch (const DataError&) {
        throw DataError("class '" + class_name + "' absent from scene " + std::to_string(scene.seed));
    }
    const auto hits = p.select(scene);
    if (hits.empty()) throw DataError("class '" + class_name + "' absent from scene " + std::to_string(scene.seed));
    const auto& t = kSemanticTemplates[static_cast<std::size_t>(template_id)];
    Sample s = base_sample(scene, std::move(id), SampleKind::semantic);
    s.instruction = fill(t.question, {class_name});
    s.answer_text = t.answer;
    s.target_masks.push_back(scene.union_mask(hits));
    return s;
}

namespace {

std::size_t single_target(const Scene& scene, const QuerySpec& query) {
    if (query.target.fact) throw UsageError("referring queries must be explicit");
    const auto hits = query.target.select(scene);
    if (hits.empty()) throw DataError("description '" + query.target.describe() + "' matches no object");
    if (hits.size() > 1) {
        throw DataError("ambiguous description '" + query.target.describe() + "' matches " +
                        std::to_string(hits.size()) + " objects");
    }
    return hits.front();
}

}  // namespace

Sample make_referring_sample(const Scene& scene, const QuerySpec& query, std::string id, int template_id) {
    if (template_id < 0 || template_id >= referring_template_count()) throw UsageError("referring template out of range");
    const std::size_t target = single_target(scene, query);
    Sample s = base_sample(scene, std::move(id), SampleKind::referring);
    s.phrasing = query.phrasing;
    s.instruction = fill(kReferringQuestions[static_cast<std::size_t>(template_id)], {query.target.describe()});
    s.answer_text = kReferringAnswer;
    s.target_masks.push_back(scene.mask_of(target));
    return s;
}

Sample make_multi_referring_sample(const Scene& scene, const QuerySpec& first, const QuerySpec& second,
                                   std::string id) {
    const std::size_t a = single_target(scene, first);
    const std::size_t b = single_target(scene, second);
    if (a == b) throw DataError("multi-target query names the same object twice");
    Sample s = base_sample(scene, std::move(id), SampleKind::referring);
    s.instruction = fill(kMultiQuestion, {first.target.describe(), second.target.describe()});
    s.answer_text = kMultiAnswer;
    s.target_masks.push_back(scene.mask_of(a));
    s.target_masks.push_back(scene.mask_of(b));
    return s;
}

Sample make_reasoning_sample(const Scene& scene, const QuerySpec& query, std::string id) {
    if (!query.target.fact) throw UsageError("reasoning queries need a fact predicate");
    const auto hits = query.target.select(scene);
    if (hits.empty()) throw DataError("reasoning query '" + short_phrase(*query.target.fact) + "' selects no object");
    const Fact f = *query.target.fact;
    const bool extremal = kind_of(f) == QueryKind::attribute_reasoning;
    if (extremal && hits.size() > 1) {
        throw DataError("reasoning query '" + short_phrase(f) + "' is ambiguous in scene " + std::to_string(scene.seed));
    }
    Sample s = base_sample(scene, std::move(id), SampleKind::reasoning);
    s.phrasing = query.phrasing;
    s.instruction = query.phrasing == Phrasing::short_phrase ? fill(kReasoningShort, {short_phrase(f)})
                                                              : fill(kReasoningLong, {long_sentence(f)});
    s.answer_text = kReasoningAnswer;
    s.target_masks.push_back(scene.union_mask(hits));
    return s;
}

Sample make_vqa_sample(const Scene& scene, std::string id, int question_type) {
    Sample s = base_sample(scene, std::move(id), SampleKind::vqa);
    const auto& objs = scene.objects;
    auto count_shape = [&](Shape sh) {
        return std::count_if(objs.begin(), objs.end(), [&](const SceneObject& o) { return o.shape == sh; });
    };
    auto count_color = [&](Color c) {
        return std::count_if(objs.begin(), objs.end(), [&](const SceneObject& o) { return o.color == c; });
    };
    switch (question_type % 4) {
        case 1:
            for (const auto& o : objs) {
                if (count_shape(o.shape) == 1) {
                    s.instruction = "What color is the " + to_string(o.shape) + "?";
                    s.answer_text = to_string(o.color);
                    return s;
                }
            }
            break;
        case 2:
            for (const auto& o : objs) {
                if (count_color(o.color) == 1) {
                    s.instruction = "What shape is the " + to_string(o.color) + " object?";
                    s.answer_text = to_string(o.shape);
                    return s;
                }
            }
            break;
        case 3: {
            const Color c = objs.front().color;
            s.instruction = "How many " + to_string(c) + " objects are there?";
            s.answer_text = std::to_string(count_color(c));
            return s;
        }
        default: break;
    }
    s.instruction = "How many objects are there in this image?";
    s.answer_text = std::to_string(objs.size());
    return s;
}

std::optional<Predicate> unique_description(const Scene& scene, std::size_t i) {
    const auto& o = scene.objects.at(i);
    // Candidates ordered from shortest to most specific.
    std::vector<Predicate> candidates;
    candidates.push_back(Predicate{o.shape, std::nullopt, std::nullopt, std::nullopt});
    candidates.push_back(Predicate{std::nullopt, o.color, std::nullopt, std::nullopt});
    candidates.push_back(Predicate{o.shape, o.color, std::nullopt, std::nullopt});
    candidates.push_back(Predicate{o.shape, std::nullopt, o.size, std::nullopt});
    candidates.push_back(Predicate{o.shape, o.color, o.size, std::nullopt});
    for (const auto& p : candidates) {
        if (p.select(scene).size() == 1) return p;
    }
    return std::nullopt;
}

// Corpus --------------------------------------------------------------------

namespace {

class CorpusBuilder {
  public:
    CorpusBuilder(std::uint64_t seed, const CorpusOptions& options)
        : seed_(seed), options_(options), rng_(mix(seed ^ 0xC0FFEEull)) {}

    std::pair<std::string, Scene> next_scene(int min_objects, int max_objects) {
        for (;;) {
            const std::uint64_t index = counter_++;
            const std::uint64_t scene_seed = mix(seed_ + 0x51ED270Bull * (index + 1));
            const int n = min_objects + static_cast<int>(scene_seed % static_cast<std::uint64_t>(max_objects - min_objects + 1));
            try {
                Scene scene = generate_scene(scene_seed, n, options_.image_size, options_.image_size);
                char buf[16];
                std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(index));
                return {buf, std::move(scene)};
            } catch (const DataError&) {
                continue;
            }
        }
    }

    void semantic(DatasetSplit& split, int count) {
        int made = 0;
        while (made < count) {
            auto [key, scene] = next_scene(2, 4);
            auto names = class_names(scene);
            std::shuffle(names.begin(), names.end(), rng_);
            const int take = std::min({options_.max_categories_per_image, count - made, static_cast<int>(names.size())});
            for (int k = 0; k < take; ++k) {
                const int t = uniform(semantic_template_count());
                split.samples.push_back(
                    make_semantic_sample(scene, names[static_cast<std::size_t>(k)], t, key + "-sem" + std::to_string(k)));
                ++made;
            }
        }
    }

    void referring(DatasetSplit& split, int count) {
        int made = 0;
        while (made < count) {
            auto [key, scene] = next_scene(2, 4);
            std::vector<std::size_t> describable;
            for (std::size_t i = 0; i < scene.objects.size(); ++i) {
                if (unique_description(scene, i)) describable.push_back(i);
            }
            if (describable.empty()) continue;
            std::shuffle(describable.begin(), describable.end(), rng_);
            const bool multi = describable.size() >= 2 && unit() < options_.multi_target_fraction;
            if (multi) {
                QuerySpec a{QueryKind::explicit_ref, Phrasing::short_phrase, *unique_description(scene, describable[0])};
                QuerySpec b{QueryKind::explicit_ref, Phrasing::short_phrase, *unique_description(scene, describable[1])};
                split.samples.push_back(make_multi_referring_sample(scene, a, b, key + "-ref"));
            } else {
                QuerySpec q{QueryKind::explicit_ref, Phrasing::short_phrase, *unique_description(scene, describable[0])};
                split.samples.push_back(make_referring_sample(scene, q, key + "-ref", uniform(referring_template_count())));
            }
            ++made;
        }
    }

    void vqa(DatasetSplit& split, int count) {
        for (int i = 0; i < count; ++i) {
            auto [key, scene] = next_scene(2, 4);
            split.samples.push_back(make_vqa_sample(scene, key + "-vqa", uniform(4)));
        }
    }

    /// Facts cycle so every fact appears equally often; phrasing alternates per cycle.
    void reasoning(DatasetSplit& split, int count) {
        for (int i = 0; i < count; ++i) {
            const Fact f = kFacts[static_cast<std::size_t>(i) % kFacts.size()];
            const Phrasing ph = (i / static_cast<int>(kFacts.size())) % 2 == 0 ? Phrasing::short_phrase
                                                                                : Phrasing::long_sentence;
            QuerySpec q{kind_of(f), ph, Predicate{std::nullopt, std::nullopt, std::nullopt, f}};
            for (;;) {
                auto [key, scene] = next_scene(3, 4);
                const auto hits = q.target.select(scene);
                if (hits.empty() || (kind_of(f) == QueryKind::attribute_reasoning && hits.size() != 1)) continue;
                split.samples.push_back(make_reasoning_sample(scene, q, key + "-rsn"));
                break;
            }
        }
    }

  private:
    int uniform(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }
    double unit() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

    std::uint64_t seed_;
    CorpusOptions options_;
    std::mt19937_64 rng_;
    std::uint64_t counter_ = 0;
};

/// Splits n by fractions with the last part taking the rounding remainder.
std::array<int, 3> apportion(int n, const std::array<double, 3>& fr) {
    std::array<int, 3> out{};
    int used = 0;
    for (std::size_t i = 0; i < 2; ++i) {
        out[i] = static_cast<int>(std::lround(n * fr[i]));
        out[i] = std::min(out[i], n - used);
        used += out[i];
    }
    out[2] = n - used;
    return out;
}

}  // namespace

Corpus build_corpus(std::uint64_t seed, const CorpusSizes& sizes, const CorpusOptions& options) {
    const auto& fr = options.split_fractions;
    if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9) throw UsageError("split fractions must sum to 1");
    for (double f : fr) {
        if (f < 0.0) throw UsageError("split fractions must be non-negative");
    }
    if (sizes.semantic < 0 || sizes.referring < 0 || sizes.vqa < 0 || sizes.reasoning < 0 ||
        options.reasoning_finetune < 0) {
        throw UsageError("corpus sizes must be non-negative");
    }
    std::array<double, 3> reasoning_fr = fr;
    if (!options.reasoning_in_train) {
        const double rest = fr[1] + fr[2];
        if (rest <= 0.0 && sizes.reasoning > 0) throw UsageError("reasoning samples need a val or test fraction");
        reasoning_fr = {0.0, rest > 0 ? fr[1] / rest : 0.0, rest > 0 ? fr[2] / rest : 0.0};
    }

    CorpusBuilder b(seed, options);
    Corpus corpus;
    corpus.train.name = SplitName::train;
    corpus.val.name = SplitName::val;
    corpus.test.name = SplitName::test;
    corpus.reasoning_finetune.name = SplitName::train;
    const auto sem = apportion(sizes.semantic, fr);
    const auto ref = apportion(sizes.referring, fr);
    const auto vqa = apportion(sizes.vqa, fr);
    const auto rsn = apportion(sizes.reasoning, reasoning_fr);
    std::array<DatasetSplit*, 3> splits{&corpus.train, &corpus.val, &corpus.test};
    for (std::size_t i = 0; i < 3; ++i) {
        b.semantic(*splits[i], sem[i]);
        b.referring(*splits[i], ref[i]);
        b.vqa(*splits[i], vqa[i]);
        b.reasoning(*splits[i], rsn[i]);
    }
    b.reasoning(corpus.reasoning_finetune, options.reasoning_finetune);
    return corpus;
}

std::vector<std::string> template_strings() {
    std::vector<std::string> out;
    std::vector<std::string> classes;
    for (auto s : kShapes) classes.push_back(to_string(s));
    for (auto c : kColors) classes.push_back(to_string(c));
    for (const auto& t : kSemanticTemplates) {
        for (const auto& c : classes) out.push_back(fill(t.question, {c}));
        out.emplace_back(t.answer);
    }
    // Explicit descriptions over every attribute combination.
    std::vector<std::string> descriptions;
    for (int sz = -1; sz < 2; ++sz) {
        for (int col = -1; col < 4; ++col) {
            for (int sh = -1; sh < 3; ++sh) {
                Predicate p;
                if (sz >= 0) p.size = sz == 0 ? Size::small : Size::large;
                if (col >= 0) p.color = kColors[static_cast<std::size_t>(col)];
                if (sh >= 0) p.shape = kShapes[static_cast<std::size_t>(sh)];
                descriptions.push_back(p.describe());
            }
        }
    }
    for (const auto* q : kReferringQuestions) {
        for (const auto& d : descriptions) out.push_back(fill(q, {d}));
    }
    out.emplace_back(kReferringAnswer);
    out.push_back(fill(kMultiQuestion, {descriptions.front(), descriptions.back()}));
    out.emplace_back(kMultiAnswer);
    for (auto f : kFacts) {
        out.push_back(fill(kReasoningShort, {short_phrase(f)}));
        out.push_back(fill(kReasoningLong, {long_sentence(f)}));
    }
    out.emplace_back(kReasoningAnswer);
    out.emplace_back("How many objects are there in this image?");
    for (auto c : kColors) out.push_back("How many " + to_string(c) + " objects are there?");
    for (auto s : kShapes) out.push_back("What color is the " + to_string(s) + "?");
    for (auto c : kColors) out.push_back("What shape is the " + to_string(c) + " object?");
    for (int n = 0; n <= 9; ++n) out.push_back(std::to_string(n));
    return out;
}

}  // namespace seglm::synth
