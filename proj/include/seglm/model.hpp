#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "seglm/datamodel.hpp"
#include "seglm/losses.hpp"
#include "seglm/lora.hpp"
#include "seglm/mask_decoder.hpp"
#include "seglm/multimodal_lm.hpp"
#include "seglm/params.hpp"
#include "seglm/tokenizer.hpp"
#include "seglm/vision_encoder.hpp"

namespace seglm {

struct ModelConfig {
    VisionConfig vision;
    LMConfig lm;  // vocab_size is taken from the vocabulary
    ProjectionConfig projection;
    DecoderConfig decoder;
    std::optional<LoraConfig> lm_lora = LoraConfig{};
    std::uint64_t seed = 0;
    int max_answer_tokens = 24;

    /// Cross-module width checks.
    void validate() const;
    /// Small configuration used by gradient checks (2 layers, d_model 32).
    static ModelConfig tiny();
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Missing keys keep their defaults; unknown keys are errors.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct SampleLoss {
    ag::Var total;
    LossBreakdown breakdown;
};

struct Prediction {
    std::string text;  // generated answer without </s>
    Generation generation;
    std::vector<MaskLogits> logits;
    std::vector<BinaryMask> masks;
};

/// Vision encoder, language model, seg projection and mask decoder sharing
/// one parameter store and vocabulary.
class SegModel {
  public:
    /// Builds a model whose embedding tables match `vocab` exactly.
    SegModel(const ModelConfig& cfg, const Vocabulary& vocab);
    /// Builds on a vocabulary without <SEG>, then adds the token and grows the
    /// embedding tables.
    static std::unique_ptr<SegModel> create(const ModelConfig& cfg, const Vocabulary& base_vocab);

    SegModel(const SegModel&) = delete;
    SegModel& operator=(const SegModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }
    const FreezePolicy& policy() const { return policy_; }
    void set_policy(const FreezePolicy& policy);

    const VisionEncoder& vision() const { return *vision_; }
    const MultimodalLM& lm() const { return *lm_; }
    MultimodalLM& lm() { return *lm_; }
    const Projection& projection() const { return *projection_; }
    const MaskDecoder& decoder() const { return *decoder_; }

    /// Appends a token to the vocabulary and grows the embedding tables.
    void add_token(const std::string& token);

    /// True when gradients reach the vision encoder (backbone adapters on).
    bool vision_trainable() const;
    /// Features for an image; a constant unless the encoder is trainable.
    ag::Var features(const Image& image) const;

    /// Teacher-forced loss for one sample. `cached` may hold precomputed
    /// encoder features for the sample's image.
    SampleLoss sample_loss(const Sample& sample, const LossWeights& weights, const ag::Mat* cached = nullptr) const;

    Prediction predict(const Image& image, std::string_view instruction, int max_new = -1) const;

    /// Optimizer iterations completed before this model was saved.
    int trained_iterations = 0;

  private:
    ModelConfig cfg_;
    Vocabulary vocab_;
    ParameterStore store_;
    FreezePolicy policy_;
    std::unique_ptr<VisionEncoder> vision_;
    std::unique_ptr<MultimodalLM> lm_;
    std::unique_ptr<Projection> projection_;
    std::unique_ptr<MaskDecoder> decoder_;
};

/// Vocabulary covering every template the synthetic generator can emit.
Vocabulary default_base_vocabulary();

}  // namespace seglm
