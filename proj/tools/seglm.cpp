#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "seglm/datamodel.hpp"
#include "seglm/errors.hpp"
#include "seglm/metrics.hpp"
#include "seglm/model.hpp"
#include "seglm/synthdata.hpp"
#include "seglm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seglm;

namespace {

// ---- flat key/value configuration ----

/// Ordered flat table of keys with typed defaults. Values from a config file
/// and from --set overrides must name known keys and keep the default's type.
class Settings {
  public:
    void declare(const std::string& key, json value) {
        if (!values_.count(key)) order_.push_back(key);
        values_[key] = std::move(value);
    }

    void assign(const std::string& key, json value, const std::string& origin) {
        auto it = values_.find(key);
        if (it == values_.end()) throw UsageError("unknown config key '" + key + "' (" + origin + ")");
        const json& current = it->second;
        const bool ok = current.is_null() || value.is_null() ||
                        (current.is_number() && value.is_number() &&
                         (current.is_number_float() || !value.is_number_float())) ||
                        current.type() == value.type();
        if (!ok) {
            throw UsageError("config key '" + key + "' expects " + std::string(current.type_name()) + " (" + origin +
                             ")");
        }
        if (current.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0) {
            throw UsageError("config key '" + key + "' must be non-negative");
        }
        it->second = std::move(value);
    }

    void load_file(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw UsageError("cannot open config file " + path.string());
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw UsageError("config file " + path.string() + " is not valid JSON: " + e.what());
        }
        if (!j.is_object()) throw UsageError("config file must hold a flat JSON object");
        for (auto it = j.begin(); it != j.end(); ++it) assign(it.key(), it.value(), path.string());
    }

    void apply_override(const std::string& kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq), text = kv.substr(eq + 1);
        json value = json::parse(text, nullptr, false);
        if (value.is_discarded()) value = text;  // bare words are strings
        assign(key, std::move(value), "--set");
    }

    const json& at(const std::string& key) const { return values_.at(key); }
    template <class T>
    T get(const std::string& key) const {
        return values_.at(key).get<T>();
    }

    json to_json() const {
        json j = json::object();
        for (const auto& k : order_) j[k] = values_.at(k);
        return j;
    }

    /// Values under `prefix.` rebuilt into a nested object.
    json nested(const std::string& prefix) const {
        json j = json::object();
        for (const auto& k : order_) {
            if (k.rfind(prefix + ".", 0) != 0) continue;
            std::string ptr = "/" + k.substr(prefix.size() + 1);
            std::replace(ptr.begin(), ptr.end(), '.', '/');
            j[json::json_pointer(ptr)] = values_.at(k);
        }
        return j;
    }

    std::string describe() const {
        std::ostringstream out;
        out << "Config keys (set with --config FILE or --set key=value):\n";
        for (const auto& k : order_) out << "  " << k << " = " << values_.at(k).dump() << '\n';
        return out.str();
    }

  private:
    std::vector<std::string> order_;
    std::map<std::string, json> values_;
};

void declare_flattened(Settings& s, const std::string& prefix, const json& j) {
    const json flat = j.flatten();
    for (const auto& [ptr, v] : flat.items()) {
        std::string key = ptr.substr(1);
        std::replace(key.begin(), key.end(), '/', '.');
        s.declare(prefix + "." + key, v);
    }
}

Settings datagen_settings() {
    Settings s;
    const synth::CorpusSizes sizes;
    const synth::CorpusOptions opt;
    s.declare("seed", 0);
    s.declare("semantic", sizes.semantic);
    s.declare("referring", sizes.referring);
    s.declare("vqa", sizes.vqa);
    s.declare("reasoning", sizes.reasoning);
    s.declare("reasoning_finetune", 24);
    s.declare("reasoning_in_train", opt.reasoning_in_train);
    s.declare("train_fraction", opt.split_fractions[0]);
    s.declare("val_fraction", opt.split_fractions[1]);
    s.declare("test_fraction", opt.split_fractions[2]);
    s.declare("max_categories_per_image", opt.max_categories_per_image);
    s.declare("multi_target_fraction", opt.multi_target_fraction);
    s.declare("image_size", opt.image_size);
    return s;
}

Settings training_settings(const TrainConfig& defaults) {
    Settings s;
    const json table = to_json(defaults);
    for (const auto& [k, v] : table.items()) {
        if (k == "mix_weights") continue;
        s.declare(k, v);
    }
    for (auto kind : {SampleKind::semantic, SampleKind::referring, SampleKind::vqa, SampleKind::reasoning}) {
        const auto it = defaults.mix_weights.find(kind);
        s.declare("mix." + std::string(to_string(kind)), it == defaults.mix_weights.end() ? json(nullptr) : json(it->second));
    }
    return s;
}

TrainConfig train_config_from(const Settings& s) {
    json j = s.to_json();
    json mix = json::object();
    for (auto it = j.begin(); it != j.end();) {
        if (it.key().rfind("mix.", 0) == 0) {
            if (!it.value().is_null()) mix[it.key().substr(4)] = it.value();
            it = j.erase(it);
        } else if (it.key().rfind("model.", 0) == 0) {
            it = j.erase(it);
        } else {
            ++it;
        }
    }
    j["mix_weights"] = mix;
    TrainConfig cfg = train_config_from_json(j);
    cfg.validate();
    return cfg;
}

// ---- filesystem helpers ----

void prepare_output(const fs::path& out, bool force) {
    if (fs::exists(out) && !fs::is_directory(out)) throw UsageError(out.string() + " exists and is not a directory");
    if (fs::exists(out) && !fs::is_empty(out)) {
        if (!force) throw UsageError("output directory " + out.string() + " is not empty (use --force)");
        fs::remove_all(out);
    }
    fs::create_directories(out);
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

/// A split directory, or a dataset root holding `fallback` as a subdirectory.
fs::path resolve_split(const fs::path& data, const std::string& fallback) {
    if (fs::exists(data / "manifest.jsonl")) return data;
    if (fs::exists(data / fallback / "manifest.jsonl")) return data / fallback;
    throw DataError("no dataset split at " + data.string() + " (looked for manifest.jsonl and " + fallback + "/)");
}

// ---- commands ----

struct Common {
    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool force = false;
};

void add_common(CLI::App& cmd, Common& c, bool out_required) {
    cmd.add_option("--config", c.config_file, "Flat JSON config file")->check(CLI::ExistingFile);
    cmd.add_option("--set", c.overrides, "Override a config key, key=value (repeatable)");
    cmd.add_option("--seed", c.seed, "Random seed; overrides the config value");
    auto* o = cmd.add_option("--out", c.out, "Output directory");
    if (out_required) o->required();
    cmd.add_flag("--force", c.force, "Replace a non-empty output directory");
}

void resolve(Settings& s, const Common& c) {
    if (!c.config_file.empty()) s.load_file(c.config_file);
    for (const auto& kv : c.overrides) s.apply_override(kv);
    if (c.seed) s.assign("seed", *c.seed, "--seed");
}

void cmd_datagen(const Common& c) {
    Settings s = datagen_settings();
    resolve(s, c);
    synth::CorpusSizes sizes{s.get<int>("semantic"), s.get<int>("referring"), s.get<int>("vqa"), s.get<int>("reasoning")};
    synth::CorpusOptions opt;
    opt.split_fractions = {s.get<double>("train_fraction"), s.get<double>("val_fraction"), s.get<double>("test_fraction")};
    opt.reasoning_in_train = s.get<bool>("reasoning_in_train");
    opt.reasoning_finetune = s.get<int>("reasoning_finetune");
    opt.max_categories_per_image = s.get<int>("max_categories_per_image");
    opt.multi_target_fraction = s.get<double>("multi_target_fraction");
    opt.image_size = s.get<int>("image_size");
    if (sizes.semantic < 0 || sizes.referring < 0 || sizes.vqa < 0 || sizes.reasoning < 0 || opt.reasoning_finetune < 0) {
        throw UsageError("corpus sizes must be non-negative");
    }
    const synth::Corpus corpus = synth::build_corpus(s.get<std::uint64_t>("seed"), sizes, opt);

    const fs::path out = c.out;
    prepare_output(out, c.force);
    save_dataset(corpus.train, out / "train");
    save_dataset(corpus.val, out / "val");
    save_dataset(corpus.test, out / "test");
    if (opt.reasoning_finetune > 0) save_dataset(corpus.reasoning_finetune, out / "reasoning_train");
    write_json_file(out / "config.json", s.to_json());
    std::cout << "train " << corpus.train.samples.size() << ", val " << corpus.val.samples.size() << ", test "
              << corpus.test.samples.size() << ", reasoning_train " << corpus.reasoning_finetune.samples.size()
              << " samples written to " << out.string() << '\n';
}

struct TrainArgs {
    std::string data;
    std::string checkpoint;  // finetune base
    std::string split;
};

void train_phase(const Common& c, const TrainArgs& a, Phase phase) {
    const TrainConfig defaults = phase == Phase::pretrain ? TrainConfig{} : TrainConfig::finetune_defaults();
    Settings s = training_settings(defaults);
    std::unique_ptr<SegModel> model;
    if (phase == Phase::finetune) {
        model = load_checkpoint(a.checkpoint);
    } else {
        s.declare("model.preset", "default");
        declare_flattened(s, "model", to_json(ModelConfig{}));
    }
    resolve(s, c);

    const TrainConfig cfg = train_config_from(s);
    if (!model) {
        const auto preset = s.get<std::string>("model.preset");
        if (preset != "default" && preset != "tiny") throw UsageError("model.preset must be 'default' or 'tiny'");
        // keys left at the default preset's values follow the chosen preset
        json mj = to_json(preset == "tiny" ? ModelConfig::tiny() : ModelConfig{});
        const json base = to_json(ModelConfig{});
        json chosen = s.nested("model");
        chosen.erase("preset");
        const json flat = chosen.flatten();
        for (const auto& [ptr, v] : flat.items()) {
            const json::json_pointer p(ptr);
            if (!base.contains(p) || base.at(p) != v) mj[p] = v;
        }
        ModelConfig mc = model_config_from_json(mj);
        mc.validate();
        model = SegModel::create(mc, default_base_vocabulary());
    }

    const std::string fallback = a.split.empty() ? (phase == Phase::pretrain ? "train" : "reasoning_train") : a.split;
    const DatasetSplit data = load_dataset(resolve_split(a.data, fallback), model->config().vision.patch_size);

    const fs::path out = c.out;
    prepare_output(out, c.force);
    json run = s.to_json();
    run["phase"] = to_string(phase);
    run["data"] = a.data;
    if (!data.samples.empty()) run["image_size"] = data.samples.front().image.height();
    if (phase == Phase::finetune) run["base_checkpoint"] = a.checkpoint;
    write_json_file(out / "resolved_config.json", run);

    std::ofstream log(out / "loss_log.jsonl");
    if (!log) throw DataError("cannot write loss log in " + out.string());
    TrainCallbacks cb;
    cb.on_iteration = [&](const IterationLog& l) {
        log << to_json(l).dump() << '\n';
        log.flush();
        if ((l.iter + 1) % 50 == 0 || l.iter + 1 == cfg.total_iters) {
            std::cout << "iter " << l.iter + 1 << "/" << cfg.total_iters << "  lr " << l.lr << "  total " << l.total
                      << "  txt " << l.text << "  bce " << l.bce << "  dice " << l.dice << std::endl;
        }
    };
    cb.on_checkpoint = [&](const Trainer& t) { save_checkpoint(out, *model, &t, {{"run", run}}); };
    run_training(*model, data, cfg, phase, cb);
    std::cout << "checkpoint written to " << out.string() << '\n';
}

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string split = "val";
    std::string kinds = "reasoning";
    bool oracle = false;
    int threads = 1;
    int max_new = -1;
};

void cmd_eval(const Common& c, const EvalArgs& a) {
    if (!c.config_file.empty() || !c.overrides.empty()) throw UsageError("eval takes no config keys");
    if (a.checkpoint.empty() && !a.oracle) throw UsageError("--checkpoint is required unless --oracle is given");
    std::unique_ptr<SegModel> model = a.checkpoint.empty()
                                          ? SegModel::create(ModelConfig{}, default_base_vocabulary())
                                          : load_checkpoint(a.checkpoint);
    DatasetSplit split = load_dataset(resolve_split(a.data, a.split), model->config().vision.patch_size);
    if (a.kinds != "all") {
        std::vector<SampleKind> keep;
        std::stringstream in(a.kinds);
        for (std::string k; std::getline(in, k, ',');) {
            try {
                keep.push_back(sample_kind_from_string(k));
            } catch (const DataError&) {
                throw UsageError("unknown sample kind '" + k + "' in --kinds");
            }
        }
        std::erase_if(split.samples, [&](const Sample& s) { return std::find(keep.begin(), keep.end(), s.kind) == keep.end(); });
    }
    const EvalReport report = evaluate(*model, split, EvalOptions{a.oracle, a.max_new, a.threads});
    std::cout << report.table();

    fs::path out = c.out.empty() ? (a.checkpoint.empty() ? fs::path("eval_" + a.split) : fs::path(a.checkpoint) / ("eval_" + a.split))
                                 : fs::path(c.out);
    prepare_output(out, c.force || c.out.empty());
    std::ofstream(out / "report.txt") << report.table();
    json j = report.to_json();
    j["split"] = a.split;
    j["kinds"] = a.kinds;
    j["oracle"] = a.oracle;
    j["checkpoint"] = a.checkpoint;
    write_json_file(out / "report.json", j);
    std::ofstream records(out / "records.jsonl");
    for (const auto& r : report.records) {
        json ious = json::array();
        for (const auto& m : r.masks) ious.push_back({{"intersection", m.intersection}, {"union", m.union_}, {"iou", m.iou}});
        records << json{{"id", r.sample_id},
                        {"kind", to_string(r.kind)},
                        {"phrasing", to_string(r.phrasing)},
                        {"predicted_text", r.predicted_text},
                        {"text_match", r.text_match},
                        {"predicted_masks", r.predicted_masks},
                        {"masks", ious},
                        {"image_iou", r.image_iou()}}
                       .dump()
                << '\n';
    }
}

struct PredictArgs {
    std::string checkpoint;
    std::string image;
    std::string query;
    int max_new = -1;
};

constexpr std::array<std::array<double, 3>, 6> kOverlayColors{{
    {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}, {1.0, 1.0, 0.0}, {1.0, 0.0, 1.0}, {0.0, 1.0, 1.0}}};

Image resize_bilinear(const Image& src, int h, int w) {
    Image dst(h, w, src.channels());
    const double sy = static_cast<double>(src.height()) / h, sx = static_cast<double>(src.width()) / w;
    for (int y = 0; y < h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
        const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, src.height() - 1);
        const double ty = fy - y0;
        for (int x = 0; x < w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
            const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, src.width() - 1);
            const double tx = fx - x0;
            for (int ch = 0; ch < src.channels(); ++ch) {
                const double top = (1 - tx) * src.at(y0, x0, ch) + tx * src.at(y0, x1, ch);
                const double bot = (1 - tx) * src.at(y1, x0, ch) + tx * src.at(y1, x1, ch);
                dst.at(y, x, ch) = (1 - ty) * top + ty * bot;
            }
        }
    }
    return dst;
}

void cmd_predict(const Common& c, const PredictArgs& a) {
    if (!c.config_file.empty() || !c.overrides.empty()) throw UsageError("predict takes no config keys");
    auto model = load_checkpoint(a.checkpoint);
    Image image = read_image(a.image);
    // the patch grid the checkpoint was trained on
    int side = 64;
    if (std::ifstream in(fs::path(a.checkpoint) / "config.json"); in) {
        const json cfg = json::parse(in, nullptr, false);
        if (!cfg.is_discarded() && cfg.contains("run") && cfg["run"].contains("image_size")) {
            side = cfg["run"]["image_size"].get<int>();
        }
    }
    if (image.height() != side || image.width() != side) {
        std::cerr << "warning: resizing " << image.width() << "x" << image.height() << " image to " << side << "x"
                  << side << '\n';
        image = resize_bilinear(image, side, side);
    }
    // 8-bit grid, so overlays can be recomputed exactly from input.png
    for (double& v : image.pixels()) v = std::round(v * 255.0) / 255.0;
    const Prediction p = model->predict(image, a.query, a.max_new);
    std::cout << p.text << '\n';

    const fs::path out = c.out;
    prepare_output(out, c.force);
    std::ofstream(out / "answer.txt") << p.text << '\n';
    write_image(out / "input.png", image);
    if (p.masks.empty()) {
        std::cout << "notice: the answer contains no <SEG> token, so no mask was produced\n";
        return;
    }
    for (std::size_t k = 0; k < p.masks.size(); ++k) {
        const BinaryMask& m = p.masks[k];
        const auto& color = kOverlayColors[k % kOverlayColors.size()];
        Image overlay = image;
        Image raw(m.height(), m.width(), 3);
        for (int y = 0; y < m.height(); ++y) {
            for (int x = 0; x < m.width(); ++x) {
                for (int ch = 0; ch < 3; ++ch) {
                    raw.at(y, x, ch) = m.at(y, x) ? 1.0 : 0.0;
                    if (m.at(y, x)) overlay.at(y, x, ch) = 0.5 * image.at(y, x, ch) + 0.5 * color[static_cast<std::size_t>(ch)];
                }
            }
        }
        write_image(out / ("mask_" + std::to_string(k) + ".png"), raw);
        write_image(out / ("overlay_" + std::to_string(k) + ".png"), overlay);
    }
    std::cout << p.masks.size() << " mask(s) written to " << out.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Segmentation through a multimodal language model: data generation, training and evaluation"};
    app.require_subcommand(1);
    app.get_formatter()->column_width(36);

    Common common;
    TrainArgs train_args;
    EvalArgs eval_args;
    PredictArgs predict_args;

    auto* datagen = app.add_subcommand("datagen", "Generate the synthetic corpus");
    add_common(*datagen, common, true);
    datagen->footer(datagen_settings().describe());

    auto* train = app.add_subcommand("train", "Pretrain on semantic, referring and VQA samples");
    add_common(*train, common, true);
    train->add_option("--data", train_args.data, "Dataset root or split directory")->required();
    train->add_option("--split", train_args.split, "Split subdirectory under --data")->default_str("train");
    {
        Settings s = training_settings(TrainConfig{});
        s.declare("model.preset", "default");
        declare_flattened(s, "model", to_json(ModelConfig{}));
        train->footer(s.describe());
    }

    auto* finetune = app.add_subcommand("finetune", "Fine-tune a pretrained checkpoint on reasoning samples");
    add_common(*finetune, common, true);
    finetune->add_option("--checkpoint", train_args.checkpoint, "Pretrained checkpoint directory")->required();
    finetune->add_option("--data", train_args.data, "Dataset root or split directory")->required();
    finetune->add_option("--split", train_args.split, "Split subdirectory under --data")->default_str("reasoning_train");
    finetune->footer(training_settings(TrainConfig::finetune_defaults()).describe());

    auto* eval = app.add_subcommand("eval", "Score a checkpoint with gIoU and cIoU");
    add_common(*eval, common, false);
    eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint directory");
    eval->add_option("--data", eval_args.data, "Dataset root or split directory")->required();
    eval->add_option("--split", eval_args.split, "Split subdirectory under --data")->capture_default_str();
    eval->add_option("--kinds", eval_args.kinds, "Comma-separated sample kinds to score, or 'all'")->capture_default_str();
    eval->add_flag("--oracle", eval_args.oracle, "Score the ground truth against itself");
    eval->add_option("--threads", eval_args.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    eval->add_option("--max-new", eval_args.max_new, "Generation budget (-1: model default)")->capture_default_str();

    auto* predict = app.add_subcommand("predict", "Answer a query about one image and write mask overlays");
    add_common(*predict, common, true);
    predict->add_option("--checkpoint", predict_args.checkpoint, "Checkpoint directory")->required();
    predict->add_option("--image", predict_args.image, "RGB PNG image")->required();
    predict->add_option("--query", predict_args.query, "Question about the image")->required();
    predict->add_option("--max-new", predict_args.max_new, "Generation budget (-1: model default)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*datagen) cmd_datagen(common);
        if (*train) train_phase(common, train_args, Phase::pretrain);
        if (*finetune) train_phase(common, train_args, Phase::finetune);
        if (*eval) cmd_eval(common, eval_args);
        if (*predict) cmd_predict(common, predict_args);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
