#include "seglm/model.hpp"

#include <set>

#include "seglm/errors.hpp"
#include "seglm/synthdata.hpp"

namespace seglm {

using nlohmann::json;

void ModelConfig::validate() const {
    vision.validate();
    decoder.validate();
    projection.validate();
    if (lm.d_vis != vision.d_vis) throw UsageError("lm.d_vis must equal vision.d_vis");
    if (decoder.d_vis != vision.d_vis) throw UsageError("decoder.d_vis must equal vision.d_vis");
    if (projection.widths.front() != lm.d_model) throw UsageError("projection input width must equal lm.d_model");
    if (projection.widths.back() != decoder.d_prompt) {
        throw UsageError("projection output width must equal decoder.d_prompt");
    }
    if (max_answer_tokens < 0) throw UsageError("max_answer_tokens must be non-negative");
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.vision.d_vis = 16;
    c.vision.n_blocks = 1;
    c.vision.patch_size = 8;
    c.lm.d_model = 32;
    c.lm.n_layers = 2;
    c.lm.n_heads = 2;
    c.lm.d_vis = 16;
    c.lm.max_seq_len = 64;
    c.projection.widths = {32, 48, 16};
    c.decoder.d_prompt = 16;
    c.decoder.d_vis = 16;
    c.decoder.n_blocks = 1;
    c.decoder.n_heads = 2;
    c.decoder.mlp_dim = 32;
    c.lm_lora = LoraConfig{4, 8.0};
    return c;
}

namespace {

// Reads `key` into `out` if present and records it as consumed.
template <class T>
void take(const json& j, const char* key, T& out, std::set<std::string>& seen) {
    seen.insert(key);
    if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

void reject_unknown(const json& j, const std::set<std::string>& seen, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!seen.count(it.key())) throw UsageError("unknown config key '" + where + it.key() + "'");
    }
}

json lora_json(const std::optional<LoraConfig>& l) {
    if (!l) return nullptr;
    return {{"rank", l->rank}, {"alpha", l->alpha}};
}

std::optional<LoraConfig> lora_from(const json& j, const std::string& where) {
    if (j.is_null()) return std::nullopt;
    LoraConfig l;
    std::set<std::string> seen;
    take(j, "rank", l.rank, seen);
    take(j, "alpha", l.alpha, seen);
    reject_unknown(j, seen, where);
    return l;
}

}  // namespace

json to_json(const ModelConfig& c) {
    return {
        {"vision",
         {{"patch_size", c.vision.patch_size},
          {"d_vis", c.vision.d_vis},
          {"n_blocks", c.vision.n_blocks},
          {"channels", c.vision.channels},
          {"bias", c.vision.bias},
          {"lora", lora_json(c.vision.lora)}}},
        {"lm",
         {{"d_model", c.lm.d_model},
          {"n_layers", c.lm.n_layers},
          {"n_heads", c.lm.n_heads},
          {"vocab_size", c.lm.vocab_size},
          {"max_seq_len", c.lm.max_seq_len},
          {"d_vis", c.lm.d_vis},
          {"init_scale", c.lm.init_scale}}},
        {"projection", {{"widths", c.projection.widths}}},
        {"decoder",
         {{"d_prompt", c.decoder.d_prompt},
          {"d_vis", c.decoder.d_vis},
          {"n_blocks", c.decoder.n_blocks},
          {"n_heads", c.decoder.n_heads},
          {"mlp_dim", c.decoder.mlp_dim},
          {"upscale_stages", c.decoder.upscale_stages}}},
        {"lm_lora", lora_json(c.lm_lora)},
        {"seed", c.seed},
        {"max_answer_tokens", c.max_answer_tokens},
    };
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    try {
        std::set<std::string> seen{"vision", "lm", "projection", "decoder", "lm_lora"};
        take(j, "seed", c.seed, seen);
        take(j, "max_answer_tokens", c.max_answer_tokens, seen);
        reject_unknown(j, seen, "");
        if (auto it = j.find("vision"); it != j.end()) {
            std::set<std::string> s{"lora"};
            take(*it, "patch_size", c.vision.patch_size, s);
            take(*it, "d_vis", c.vision.d_vis, s);
            take(*it, "n_blocks", c.vision.n_blocks, s);
            take(*it, "channels", c.vision.channels, s);
            take(*it, "bias", c.vision.bias, s);
            if (auto l = it->find("lora"); l != it->end()) c.vision.lora = lora_from(*l, "vision.lora.");
            reject_unknown(*it, s, "vision.");
        }
        if (auto it = j.find("lm"); it != j.end()) {
            std::set<std::string> s;
            take(*it, "d_model", c.lm.d_model, s);
            take(*it, "n_layers", c.lm.n_layers, s);
            take(*it, "n_heads", c.lm.n_heads, s);
            take(*it, "vocab_size", c.lm.vocab_size, s);
            take(*it, "max_seq_len", c.lm.max_seq_len, s);
            take(*it, "d_vis", c.lm.d_vis, s);
            take(*it, "init_scale", c.lm.init_scale, s);
            reject_unknown(*it, s, "lm.");
        }
        if (auto it = j.find("projection"); it != j.end()) {
            std::set<std::string> s;
            take(*it, "widths", c.projection.widths, s);
            reject_unknown(*it, s, "projection.");
        }
        if (auto it = j.find("decoder"); it != j.end()) {
            std::set<std::string> s;
            take(*it, "d_prompt", c.decoder.d_prompt, s);
            take(*it, "d_vis", c.decoder.d_vis, s);
            take(*it, "n_blocks", c.decoder.n_blocks, s);
            take(*it, "n_heads", c.decoder.n_heads, s);
            take(*it, "mlp_dim", c.decoder.mlp_dim, s);
            take(*it, "upscale_stages", c.decoder.upscale_stages, s);
            reject_unknown(*it, s, "decoder.");
        }
        if (auto it = j.find("lm_lora"); it != j.end()) c.lm_lora = lora_from(*it, "lm_lora.");
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad model config: ") + e.what());
    }
    return c;
}

SegModel::SegModel(const ModelConfig& cfg, const Vocabulary& vocab) : cfg_(cfg), vocab_(vocab) {
    cfg_.lm.vocab_size = vocab_.size();
    cfg_.validate();
    // Independent streams so that toggling adapters never shifts base weights.
    Initializer vision_init(cfg_.seed * 4 + 1);
    Initializer lm_init(cfg_.seed * 4 + 2);
    Initializer head_init(cfg_.seed * 4 + 3);
    Initializer vision_lora_init(cfg_.seed * 4 + 0x9e3779b97f4a7c15ULL);
    Initializer lm_lora_init(cfg_.seed * 4 + 0x7f4a7c159e3779b9ULL);
    vision_ = std::make_unique<VisionEncoder>(cfg_.vision, store_, vision_init, &vision_lora_init);
    lm_ = std::make_unique<MultimodalLM>(cfg_.lm, store_, lm_init, cfg_.lm_lora, &lm_lora_init);
    projection_ = std::make_unique<Projection>(cfg_.projection, store_, head_init);
    decoder_ = std::make_unique<MaskDecoder>(cfg_.decoder, store_, head_init);
    policy_.apply(store_);
}

std::unique_ptr<SegModel> SegModel::create(const ModelConfig& cfg, const Vocabulary& base_vocab) {
    if (base_vocab.contains(tokens::kSeg)) throw UsageError("base vocabulary already contains <SEG>");
    auto m = std::make_unique<SegModel>(cfg, base_vocab);
    m->add_token(std::string(tokens::kSeg));
    return m;
}

void SegModel::set_policy(const FreezePolicy& policy) {
    policy_ = policy;
    policy_.apply(store_);
}

void SegModel::add_token(const std::string& token) {
    vocab_ = vocab_.expand(token);
    lm_->resize_embeddings(vocab_.size());
    cfg_.lm.vocab_size = vocab_.size();
}

bool SegModel::vision_trainable() const {
    return (cfg_.vision.lora && policy_.vision_lora) || policy_.vision_base;
}

ag::Var SegModel::features(const Image& image) const {
    if (vision_trainable() && ag::grad_enabled()) return vision_->forward(image);
    return ag::constant(vision_->encode(image).grid);
}

SampleLoss SegModel::sample_loss(const Sample& sample, const LossWeights& weights, const ag::Mat* cached) const {
    const TokenSequence tokens = encode_conversation(sample.instruction, sample.answer_text, vocab_);
    if (tokens.seg_positions.size() != sample.target_masks.size()) {
        throw DataError(sample.id + ": answer has " + std::to_string(tokens.seg_positions.size()) +
                        " <SEG> tokens but " + std::to_string(sample.target_masks.size()) + " masks");
    }
    const ag::Var feats = cached ? ag::constant(*cached) : features(sample.image);
    const ag::Var image_embeds = lm_->embed_image(feats);
    std::vector<int> expanded;
    const ag::Var hidden = lm_->hidden_states(tokens, image_embeds, &expanded);

    // position i predicts token i+1 for every token inside the assistant span
    std::vector<int> rows, targets;
    for (int pos : tokens.assistant_positions()) {
        if (pos == 0) continue;
        rows.push_back(expanded[static_cast<std::size_t>(pos - 1)]);
        targets.push_back(tokens.ids[static_cast<std::size_t>(pos)]);
    }
    const std::vector<std::uint8_t> include(targets.size(), 1);
    const ag::Var text = text_ce(lm_->logits_for(hidden, rows), targets, include, vocab_.pad_id());

    std::vector<ag::Var> bce, dice;
    std::vector<MaskTerm> terms;
    if (!sample.target_masks.empty()) {
        std::vector<int> seg_rows;
        for (int pos : tokens.seg_positions) seg_rows.push_back(expanded[static_cast<std::size_t>(pos)]);
        const ag::Var prompts = (*projection_)(ag::gather_rows(hidden, seg_rows));
        const int p = cfg_.vision.patch_size;
        const int gh = sample.image.height() / p, gw = sample.image.width() / p;
        const ag::Var logits = decoder_->decode(prompts, feats, gh, gw, p);
        const Eigen::Index pixels = Eigen::Index(sample.image.height()) * sample.image.width();
        for (std::size_t k = 0; k < sample.target_masks.size(); ++k) {
            const ag::Var block = seg_rows.size() == 1 ? logits
                                                       : ag::slice_rows(logits, static_cast<Eigen::Index>(k) * pixels,
                                                                        pixels);
            bce.push_back(bce_loss(block, sample.target_masks[k]));
            dice.push_back(dice_loss(block, sample.target_masks[k]));
            terms.push_back({bce.back().item(), dice.back().item()});
        }
    }
    SampleLoss out;
    out.total = total_loss(text, bce, dice, weights);
    out.breakdown = total_loss(text.item(), terms, weights);
    return out;
}

Prediction SegModel::predict(const Image& image, std::string_view instruction, int max_new) const {
    ag::NoGradGuard guard;
    if (max_new < 0) max_new = cfg_.max_answer_tokens;
    const DenseFeatures feats = vision_->encode(image);
    const ag::Var image_embeds = lm_->embed_image(ag::constant(feats.grid));
    const TokenSequence prompt = encode_prompt(instruction, vocab_);

    Prediction out;
    out.generation = lm_->generate(prompt, image_embeds, max_new, vocab_);
    std::vector<int> answer(out.generation.tokens.ids.begin() + prompt.size(), out.generation.tokens.ids.end());
    if (!answer.empty() && answer.back() == vocab_.eos_id()) answer.pop_back();
    out.text = decode(answer, vocab_);

    std::vector<ag::RowVec> prompts;
    for (auto& seg : out.generation.segs) {
        seg.projected = projection_->project(seg.raw);
        prompts.push_back(seg.projected);
    }
    out.logits = decoder_->decode_masks(prompts, feats);
    for (const auto& l : out.logits) out.masks.push_back(binarize(l));
    return out;
}

Vocabulary default_base_vocabulary() { return Vocabulary::from_corpus(synth::template_strings()); }

}  // namespace seglm
