#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "seglm/datamodel.hpp"
#include "seglm/losses.hpp"
#include "seglm/model.hpp"

namespace seglm {

enum class Phase { pretrain, finetune };
std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

struct TrainConfig {
    double lr = 3e-4;
    double weight_decay = 0.0;
    int warmup_iters = 100;
    int batch_per_step = 2;
    int grad_accum_steps = 10;
    int total_iters = 2000;
    int max_categories_per_image = 3;
    std::uint64_t seed = 0;
    std::map<SampleKind, double> mix_weights;  // empty: uniform over available kinds
    double grad_clip = 1.0;                     // global norm; <= 0 disables
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    LossWeights loss;
    int checkpoint_every = 0;  // 0: only at the end

    void validate() const;
    static TrainConfig finetune_defaults();
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// 0 → lr over warmup_iters, then linear decay to 0 at total_iters.
double lr_at(int iter, const TrainConfig& cfg);

/// Adam with decoupled weight decay over a fixed parameter list.
class AdamW {
  public:
    AdamW(std::vector<NamedParam> params, double beta1, double beta2, double eps, double weight_decay);
    void step(double lr);
    int steps() const { return t_; }
    const std::vector<NamedParam>& params() const { return params_; }
    std::vector<ag::Mat>& first_moments() { return m_; }
    std::vector<ag::Mat>& second_moments() { return v_; }
    const std::vector<ag::Mat>& first_moments() const { return m_; }
    const std::vector<ag::Mat>& second_moments() const { return v_; }
    void set_steps(int t) { t_ = t; }

  private:
    std::vector<NamedParam> params_;
    std::vector<ag::Mat> m_, v_;
    double b1_, b2_, eps_, wd_;
    int t_ = 0;
};

/// Rescales gradients so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(const std::vector<NamedParam>& params, double max_norm);

/// A unit of the batch: one sample, or several semantic samples that share an
/// image. Its loss is the mean over its members.
struct BatchItem {
    std::vector<const Sample*> members;
};

/// Draws batch items by kind according to the mixing weights.
class DataMixer {
  public:
    DataMixer(const std::vector<Sample>& pool, const TrainConfig& cfg);
    BatchItem draw(std::mt19937_64& rng) const;
    const std::vector<SampleKind>& kinds() const { return kinds_; }

  private:
    std::vector<SampleKind> kinds_;
    std::vector<double> weights_;
    std::map<SampleKind, std::vector<const Sample*>> by_kind_;
    std::unordered_map<std::string, std::vector<const Sample*>> semantic_by_scene_;
    int max_categories_;
};

struct IterationLog {
    int iter = 0;
    double lr = 0.0;
    double text = 0.0;
    double bce = 0.0;
    double dice = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
    std::vector<std::string> sample_ids;
};

nlohmann::json to_json(const IterationLog& log);

/// Owns the optimizer state and data stream for one training phase.
class Trainer {
  public:
    Trainer(SegModel& model, const TrainConfig& cfg, std::vector<Sample> pool);

    /// Forward/backward for a micro-batch; gradients accumulate scaled by
    /// `weight` per item. Returns per-item breakdowns.
    std::vector<LossBreakdown> micro_step(const std::vector<BatchItem>& items, double weight,
                                          std::vector<std::string>* ids = nullptr);
    /// One optimizer iteration: batch_per_step × grad_accum_steps items.
    IterationLog step();
    int iteration() const { return iter_; }
    const TrainConfig& config() const { return cfg_; }
    AdamW& optimizer() { return *opt_; }
    const AdamW& optimizer() const { return *opt_; }
    std::mt19937_64& rng() { return rng_; }
    const std::mt19937_64& rng() const { return rng_; }
    void set_iteration(int iter) { iter_ = iter; }

  private:
    const ag::Mat& cached_features(const Sample& s);

    SegModel& model_;
    TrainConfig cfg_;
    std::vector<Sample> pool_;
    std::unique_ptr<DataMixer> mixer_;
    std::unique_ptr<AdamW> opt_;
    std::mt19937_64 rng_;
    int iter_ = 0;
    std::unordered_map<std::string, ag::Mat> feature_cache_;
};

/// Samples eligible for a phase: pretrain drops reasoning samples, finetune
/// keeps only them.
std::vector<Sample> phase_pool(const DatasetSplit& split, Phase phase);

struct TrainCallbacks {
    std::function<void(const IterationLog&)> on_iteration;
    std::function<void(const Trainer&)> on_checkpoint;
};

/// Runs cfg.total_iters iterations of the given phase. Finetuning requires a
/// model that has been trained before.
void run_training(SegModel& model, const DatasetSplit& data, const TrainConfig& cfg, Phase phase,
                  const TrainCallbacks& callbacks = {});

// Checkpoint directory: manifest.json, config.json, vocab.txt,
// params/<group>/<name>.bin and optional optimizer/ moments, all raw
// little-endian float64.
void save_checkpoint(const std::filesystem::path& dir, const SegModel& model, const Trainer* trainer = nullptr,
                     const nlohmann::json& extra_config = {});
std::unique_ptr<SegModel> load_checkpoint(const std::filesystem::path& dir);
/// Restores optimizer moments, iteration and rng from a checkpoint into a
/// trainer built on the loaded model.
void restore_trainer_state(const std::filesystem::path& dir, Trainer& trainer);

}  // namespace seglm
