#include "seglm/trainer.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "seglm/errors.hpp"

namespace seglm {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint files assume a little-endian host");

namespace {

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::string join_ids(const std::vector<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) out += (out.empty() ? "" : ",") + id;
    return out;
}

}  // namespace

std::string to_string(Phase p) { return p == Phase::pretrain ? "pretrain" : "finetune"; }

Phase phase_from_string(const std::string& s) {
    if (s == "pretrain") return Phase::pretrain;
    if (s == "finetune") return Phase::finetune;
    throw UsageError("unknown phase '" + s + "'");
}

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw UsageError("lr must be finite and non-negative");
    if (!(weight_decay >= 0.0)) throw UsageError("weight_decay must be non-negative");
    if (warmup_iters < 0) throw UsageError("warmup_iters must be non-negative");
    if (batch_per_step < 1 || grad_accum_steps < 1) throw UsageError("batch_per_step and grad_accum_steps must be >= 1");
    if (total_iters < 1) throw UsageError("total_iters must be positive");
    if (max_categories_per_image < 1) throw UsageError("max_categories_per_image must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("Adam betas must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw UsageError("adam_eps must be positive");
    if (!mix_weights.empty()) {
        double sum = 0.0;
        for (const auto& [k, w] : mix_weights) {
            if (!(w >= 0.0)) throw UsageError("mix weights must be non-negative");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw UsageError("mix weights must sum to 1");
    }
    loss.validate();
}

TrainConfig TrainConfig::finetune_defaults() {
    TrainConfig c;
    c.total_iters = 300;
    return c;
}

json to_json(const TrainConfig& c) {
    json mix = json::object();
    for (const auto& [k, w] : c.mix_weights) mix[std::string(to_string(k))] = w;
    return {{"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"warmup_iters", c.warmup_iters},
            {"batch_per_step", c.batch_per_step},
            {"grad_accum_steps", c.grad_accum_steps},
            {"total_iters", c.total_iters},
            {"max_categories_per_image", c.max_categories_per_image},
            {"seed", c.seed},
            {"mix_weights", mix},
            {"grad_clip", c.grad_clip},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},
            {"lambda_txt", c.loss.text},
            {"lambda_mask", c.loss.mask},
            {"lambda_bce", c.loss.bce},
            {"lambda_dice", c.loss.dice},
            {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    std::set<std::string> seen;
    auto take = [&](const char* key, auto& out) {
        seen.insert(key);
        if (auto it = j.find(key); it != j.end()) out = it->get<std::decay_t<decltype(out)>>();
    };
    try {
        take("lr", c.lr);
        take("weight_decay", c.weight_decay);
        take("warmup_iters", c.warmup_iters);
        take("batch_per_step", c.batch_per_step);
        take("grad_accum_steps", c.grad_accum_steps);
        take("total_iters", c.total_iters);
        take("max_categories_per_image", c.max_categories_per_image);
        take("seed", c.seed);
        take("grad_clip", c.grad_clip);
        take("beta1", c.beta1);
        take("beta2", c.beta2);
        take("adam_eps", c.adam_eps);
        take("lambda_txt", c.loss.text);
        take("lambda_mask", c.loss.mask);
        take("lambda_bce", c.loss.bce);
        take("lambda_dice", c.loss.dice);
        take("checkpoint_every", c.checkpoint_every);
        seen.insert("mix_weights");
        if (auto it = j.find("mix_weights"); it != j.end()) {
            for (auto m = it->begin(); m != it->end(); ++m) {
                c.mix_weights[sample_kind_from_string(m.key())] = m.value().get<double>();
            }
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad training config: ") + e.what());
    } catch (const DataError& e) {
        throw UsageError(std::string("bad training config: ") + e.what());
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!seen.count(it.key())) throw UsageError("unknown training config key '" + it.key() + "'");
    }
    return c;
}

double lr_at(int iter, const TrainConfig& cfg) {
    if (iter < 0) throw UsageError("negative iteration");
    if (iter < cfg.warmup_iters) return cfg.lr * iter / cfg.warmup_iters;
    if (iter >= cfg.total_iters) return 0.0;
    const int span = cfg.total_iters - cfg.warmup_iters;
    return cfg.lr * static_cast<double>(cfg.total_iters - iter) / span;
}

AdamW::AdamW(std::vector<NamedParam> params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {
    for (const auto& p : params_) {
        m_.push_back(ag::Mat::Zero(p.var.rows(), p.var.cols()));
        v_.push_back(ag::Mat::Zero(p.var.rows(), p.var.cols()));
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        ag::Var p = params_[i].var;
        auto& m = m_[i];
        auto& v = v_[i];
        if (m.rows() != p.rows() || m.cols() != p.cols()) throw UsageError("optimizer state shape mismatch");
        const ag::Mat& g = p.grad();
        if (g.size() == 0) {
            m *= b1_;
            v *= b2_;
        } else {
            m = b1_ * m + (1.0 - b1_) * g;
            v = b2_ * v + (1.0 - b2_) * g.cwiseProduct(g);
        }
        ag::Mat& w = p.mutable_value();
        if (wd_ != 0.0) w -= (lr * wd_) * w;
        w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
}

double clip_grad_norm(const std::vector<NamedParam>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (p.var.grad().size()) sq += p.var.grad().squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& p : params) {
            if (p.var.grad().size()) p.var.node()->grad *= s;
        }
    }
    return norm;
}

DataMixer::DataMixer(const std::vector<Sample>& pool, const TrainConfig& cfg)
    : max_categories_(cfg.max_categories_per_image) {
    for (const auto& s : pool) {
        by_kind_[s.kind].push_back(&s);
        if (s.kind == SampleKind::semantic) semantic_by_scene_[s.scene_key()].push_back(&s);
    }
    if (by_kind_.empty()) throw DataError("no training samples");
    if (cfg.mix_weights.empty()) {
        for (const auto& [k, v] : by_kind_) {
            kinds_.push_back(k);
            weights_.push_back(1.0 / static_cast<double>(by_kind_.size()));
        }
    } else {
        for (const auto& [k, w] : cfg.mix_weights) {
            if (w <= 0.0) continue;
            if (!by_kind_.count(k)) {
                throw DataError("mix weight given for kind '" + std::string(to_string(k)) + "' with no samples");
            }
            kinds_.push_back(k);
            weights_.push_back(w);
        }
        if (kinds_.empty()) throw UsageError("all mix weights are zero");
    }
}

BatchItem DataMixer::draw(std::mt19937_64& rng) const {
    double u = uniform01(rng);
    std::size_t k = 0;
    while (k + 1 < kinds_.size() && u >= weights_[k]) {
        u -= weights_[k];
        ++k;
    }
    const auto& candidates = by_kind_.at(kinds_[k]);
    const Sample* first = candidates[uniform_index(rng, candidates.size())];
    BatchItem item;
    item.members.push_back(first);
    if (first->kind == SampleKind::semantic && max_categories_ > 1) {
        std::vector<const Sample*> others;
        for (const Sample* s : semantic_by_scene_.at(first->scene_key())) {
            if (s != first) others.push_back(s);
        }
        while (!others.empty() && static_cast<int>(item.members.size()) < max_categories_) {
            const std::size_t i = uniform_index(rng, others.size());
            item.members.push_back(others[i]);
            others.erase(others.begin() + static_cast<std::ptrdiff_t>(i));
        }
    }
    return item;
}

json to_json(const IterationLog& l) {
    return {{"iter", l.iter}, {"lr", l.lr},     {"text", l.text},           {"bce", l.bce},
            {"dice", l.dice}, {"total", l.total}, {"grad_norm", l.grad_norm}};
}

Trainer::Trainer(SegModel& model, const TrainConfig& cfg, std::vector<Sample> pool)
    : model_(model), cfg_(cfg), pool_(std::move(pool)), rng_(cfg.seed) {
    cfg_.validate();
    mixer_ = std::make_unique<DataMixer>(pool_, cfg_);
    auto set = trainable_parameters(model_.params(), model_.policy());
    opt_ = std::make_unique<AdamW>(std::move(set.params), cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay);
}

const ag::Mat& Trainer::cached_features(const Sample& s) {
    auto it = feature_cache_.find(s.id);
    if (it == feature_cache_.end()) it = feature_cache_.emplace(s.id, model_.vision().encode(s.image).grid).first;
    return it->second;
}

std::vector<LossBreakdown> Trainer::micro_step(const std::vector<BatchItem>& items, double weight,
                                               std::vector<std::string>* ids) {
    std::vector<LossBreakdown> out;
    const bool cache = !model_.vision_trainable();
    for (const auto& item : items) {
        LossBreakdown mean;
        const double share = 1.0 / static_cast<double>(item.members.size());
        for (const Sample* s : item.members) {
            if (ids) ids->push_back(s->id);
            SampleLoss sl = model_.sample_loss(*s, cfg_.loss, cache ? &cached_features(*s) : nullptr);
            if (!std::isfinite(sl.breakdown.total)) {
                throw NumericalError("non-finite loss at iteration " + std::to_string(iter_) + " (samples: " +
                                     (ids ? join_ids(*ids) : s->id) + ")");
            }
            ag::backward(ag::scale(sl.total, weight * share));
            mean.text += share * sl.breakdown.text;
            mean.bce += share * sl.breakdown.bce;
            mean.dice += share * sl.breakdown.dice;
            mean.total += share * sl.breakdown.total;
            mean.n_masks += sl.breakdown.n_masks;
        }
        out.push_back(mean);
    }
    return out;
}

IterationLog Trainer::step() {
    IterationLog log;
    log.iter = iter_;
    log.lr = lr_at(iter_, cfg_);
    const int n_items = cfg_.batch_per_step * cfg_.grad_accum_steps;
    std::vector<BatchItem> items;
    items.reserve(static_cast<std::size_t>(n_items));
    for (int i = 0; i < n_items; ++i) items.push_back(mixer_->draw(rng_));

    for (const auto& p : opt_->params()) {
        ag::Var v = p.var;
        v.zero_grad();
    }
    const double weight = 1.0 / n_items;
    for (int m = 0; m < cfg_.grad_accum_steps; ++m) {
        const auto first = items.begin() + m * cfg_.batch_per_step;
        const std::vector<BatchItem> micro(first, first + cfg_.batch_per_step);
        for (const auto& b : micro_step(micro, weight, &log.sample_ids)) {
            log.text += weight * b.text;
            log.bce += weight * b.bce;
            log.dice += weight * b.dice;
            log.total += weight * b.total;
        }
    }
    log.grad_norm = clip_grad_norm(opt_->params(), cfg_.grad_clip);
    if (!std::isfinite(log.grad_norm)) {
        throw NumericalError("non-finite gradient at iteration " + std::to_string(iter_) + " (samples: " +
                             join_ids(log.sample_ids) + ")");
    }
    opt_->step(log.lr);
    ++iter_;
    return log;
}

std::vector<Sample> phase_pool(const DatasetSplit& split, Phase phase) {
    std::vector<Sample> out;
    for (const auto& s : split.samples) {
        const bool reasoning = s.kind == SampleKind::reasoning;
        if (reasoning == (phase == Phase::finetune)) out.push_back(s);
    }
    if (out.empty()) {
        throw DataError(std::string("no ") + (phase == Phase::finetune ? "reasoning" : "non-reasoning") +
                        " samples for " + to_string(phase));
    }
    return out;
}

void run_training(SegModel& model, const DatasetSplit& data, const TrainConfig& cfg, Phase phase,
                  const TrainCallbacks& callbacks) {
    if (phase == Phase::finetune && model.trained_iterations == 0) {
        throw UsageError("finetune needs a pretrained base checkpoint");
    }
    Trainer trainer(model, cfg, phase_pool(data, phase));
    for (int i = 0; i < cfg.total_iters; ++i) {
        const IterationLog log = trainer.step();
        if (callbacks.on_iteration) callbacks.on_iteration(log);
        if (cfg.checkpoint_every > 0 && trainer.iteration() % cfg.checkpoint_every == 0 &&
            trainer.iteration() < cfg.total_iters && callbacks.on_checkpoint) {
            callbacks.on_checkpoint(trainer);
        }
    }
    model.trained_iterations += cfg.total_iters;
    if (callbacks.on_checkpoint) callbacks.on_checkpoint(trainer);
}

// ---- checkpoint container ----

namespace {

void write_matrix(const fs::path& path, const ag::Mat& m) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!out) throw DataError("failed writing " + path.string());
}

ag::Mat read_matrix(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing checkpoint file " + path.string());
    const auto expected = static_cast<std::uintmax_t>(rows * cols) * sizeof(double);
    if (fs::file_size(path) != expected) throw DataError("size mismatch in " + path.string());
    ag::Mat m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(expected));
    if (!in) throw DataError("failed reading " + path.string());
    return m;
}

std::string param_file(const NamedParam& p) { return "params/" + std::string(to_string(p.group)) + "/" + p.name + ".bin"; }

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("missing " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace

void save_checkpoint(const fs::path& dir, const SegModel& model, const Trainer* trainer, const json& extra_config) {
    fs::create_directories(dir);
    json params = json::array();
    for (const auto& p : model.params().all()) {
        const std::string file = param_file(p);
        write_matrix(dir / file, p.var.value());
        params.push_back({{"name", p.name},
                          {"group", to_string(p.group)},
                          {"rows", p.var.rows()},
                          {"cols", p.var.cols()},
                          {"file", file}});
    }
    json manifest = {{"format", "seglm-checkpoint"},
                     {"version", 1},
                     {"dtype", "float64"},
                     {"byte_order", "little"},
                     {"trained_iterations", model.trained_iterations},
                     {"params", params}};
    if (trainer) {
        const Trainer* t = trainer;
        std::ostringstream rng;
        rng << t->rng();
        json moments = json::array();
        const auto& opt = t->optimizer();
        for (std::size_t i = 0; i < opt.params().size(); ++i) {
            const auto& p = opt.params()[i];
            const std::string base = "optimizer/" + p.name;
            write_matrix(dir / (base + ".m.bin"), opt.first_moments()[i]);
            write_matrix(dir / (base + ".v.bin"), opt.second_moments()[i]);
            moments.push_back({{"name", p.name}, {"m", base + ".m.bin"}, {"v", base + ".v.bin"}});
        }
        manifest["trainer"] = {{"iteration", t->iteration()},
                               {"optimizer_steps", opt.steps()},
                               {"rng_state", rng.str()},
                               {"moments", moments}};
    }
    write_json(dir / "manifest.json", manifest);
    json config = extra_config.is_object() ? extra_config : json::object();
    config["model"] = to_json(model.config());
    write_json(dir / "config.json", config);
    model.vocab().save(dir / "vocab.txt");
}

std::unique_ptr<SegModel> load_checkpoint(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("checkpoint directory " + dir.string() + " not found");
    const json manifest = read_json(dir / "manifest.json");
    const json config = read_json(dir / "config.json");
    if (manifest.value("format", "") != "seglm-checkpoint") throw DataError("not a checkpoint: " + dir.string());
    if (manifest.value("dtype", "") != "float64") throw DataError("unsupported checkpoint dtype");
    if (!config.contains("model")) throw DataError("config.json lacks a model section");
    ModelConfig cfg;
    try {
        cfg = model_config_from_json(config["model"]);
    } catch (const UsageError& e) {
        throw DataError(std::string("checkpoint config: ") + e.what());
    }
    const Vocabulary vocab = Vocabulary::load(dir / "vocab.txt");
    if (cfg.lm.vocab_size != vocab.size()) {
        throw DataError("checkpoint vocab has " + std::to_string(vocab.size()) + " tokens, config says " +
                        std::to_string(cfg.lm.vocab_size));
    }
    auto model = std::make_unique<SegModel>(cfg, vocab);
    std::set<std::string> loaded;
    for (const auto& e : manifest.at("params")) {
        const std::string name = e.at("name").get<std::string>();
        if (!model->params().contains(name)) throw DataError("checkpoint has unknown parameter " + name);
        const NamedParam& p = model->params().get(name);
        if (e.at("group").get<std::string>() != to_string(p.group)) throw DataError("group mismatch for " + name);
        const auto rows = e.at("rows").get<Eigen::Index>(), cols = e.at("cols").get<Eigen::Index>();
        if (rows != p.var.rows() || cols != p.var.cols()) throw DataError("shape mismatch for " + name);
        ag::Var v = p.var;
        v.mutable_value() = read_matrix(dir / e.at("file").get<std::string>(), rows, cols);
        loaded.insert(name);
    }
    for (const auto& p : model->params().all()) {
        if (!loaded.count(p.name)) throw DataError("checkpoint lacks parameter " + p.name);
    }
    model->trained_iterations = manifest.value("trained_iterations", 0);
    return model;
}

void restore_trainer_state(const fs::path& dir, Trainer& trainer) {
    const json manifest = read_json(dir / "manifest.json");
    if (!manifest.contains("trainer")) throw DataError("checkpoint has no trainer state");
    const json& t = manifest["trainer"];
    auto& opt = trainer.optimizer();
    std::map<std::string, const json*> by_name;
    for (const auto& m : t.at("moments")) by_name[m.at("name").get<std::string>()] = &m;
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        const auto& p = opt.params()[i];
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw DataError("checkpoint lacks optimizer state for " + p.name);
        opt.first_moments()[i] = read_matrix(dir / it->second->at("m").get<std::string>(), p.var.rows(), p.var.cols());
        opt.second_moments()[i] = read_matrix(dir / it->second->at("v").get<std::string>(), p.var.rows(), p.var.cols());
    }
    opt.set_steps(t.at("optimizer_steps").get<int>());
    trainer.set_iteration(t.at("iteration").get<int>());
    std::istringstream rng(t.at("rng_state").get<std::string>());
    rng >> trainer.rng();
    if (!rng) throw DataError("corrupt rng state in checkpoint");
}

}  // namespace seglm
