#include "seglm/multimodal_lm.hpp"

#include <cmath>

#include "seglm/errors.hpp"
#include "seglm/vision_encoder.hpp"

namespace seglm {

void LMConfig::validate() const {
    if (d_model < 1 || n_layers < 0 || n_heads < 1 || d_model % n_heads != 0) {
        throw UsageError("d_model must be a positive multiple of n_heads");
    }
    if (vocab_size < 1) throw UsageError("vocab_size must be positive");
    if (max_seq_len < 1) throw UsageError("max_seq_len must be positive");
    if (d_vis < 1) throw UsageError("d_vis must be positive");
}

std::vector<int> expanded_index(const TokenSequence& tokens, int n_patches) {
    if (tokens.image_positions.size() > 1) throw DataError("at most one <IMAGE> token is supported");
    std::vector<int> out(tokens.ids.size());
    int cursor = 0;
    for (int i = 0; i < tokens.size(); ++i) {
        out[static_cast<std::size_t>(i)] = cursor;
        const bool image = !tokens.image_positions.empty() && tokens.image_positions.front() == i;
        cursor += image ? n_patches : 1;
    }
    return out;
}

std::vector<SegEmbedding> extract_seg_embeddings(const TokenSequence& tokens, const ag::Mat& hidden,
                                                 std::span<const int> expanded) {
    std::vector<SegEmbedding> out;
    for (int pos : tokens.seg_positions) {
        const int row = expanded[static_cast<std::size_t>(pos)];
        if (row >= hidden.rows()) throw UsageError("hidden states do not cover <SEG> position");
        SegEmbedding e;
        e.raw = hidden.row(row);
        e.source_position = pos;
        e.expanded_position = row;
        out.push_back(std::move(e));
    }
    return out;
}

MultimodalLM::MultimodalLM(const LMConfig& cfg, ParameterStore& store, Initializer& init,
                           const std::optional<LoraConfig>& lora, Initializer* lora_init)
    : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.d_model;
    const double s = cfg_.init_scale;
    const double unit = 1.0 / std::sqrt(double(d));
    const auto base = ParamGroup::lm_base;

    embed_ = store.add("lm.embed_tokens", ParamGroup::embed_tokens, init.normal(cfg_.vocab_size, d, s));
    pos_ = store.add("lm.pos_embed", base, init.normal(cfg_.max_seq_len, d, s));
    projector_ = make_linear(store, "lm.mm_projector", base, cfg_.d_vis, d, s / std::sqrt(double(cfg_.d_vis)), init);
    for (int i = 0; i < cfg_.n_layers; ++i) {
        const std::string n = "lm.layer" + std::to_string(i);
        Block b;
        b.ln1 = make_layer_norm(store, n + ".ln1", base, d);
        b.q = make_linear(store, n + ".attn.q", base, d, d, unit, init);
        b.k = make_linear(store, n + ".attn.k", base, d, d, unit, init);
        b.v = make_linear(store, n + ".attn.v", base, d, d, unit, init);
        b.o = make_linear(store, n + ".attn.o", base, d, d, s * unit, init);
        b.ln2 = make_layer_norm(store, n + ".ln2", base, d);
        b.fc1 = make_linear(store, n + ".mlp.fc1", base, d, 4 * d, unit, init);
        b.fc2 = make_linear(store, n + ".mlp.fc2", base, 4 * d, d, s * unit / 2.0, init);
        blocks_.push_back(std::move(b));
    }
    final_ln_ = make_layer_norm(store, "lm.final_ln", base, d);
    head_ = store.add("lm.lm_head", ParamGroup::lm_head, init.normal(cfg_.vocab_size, d, s));

    if (lora) {
        if (!lora_init) throw UsageError("LM adapters need an initializer");
        for (int i = 0; i < cfg_.n_layers; ++i) {
            const std::string n = "lm.layer" + std::to_string(i);
            auto& b = blocks_[static_cast<std::size_t>(i)];
            wrap_linear(b.q, n + ".attn.q", store, ParamGroup::lm_lora, *lora, *lora_init);
            wrap_linear(b.v, n + ".attn.v", store, ParamGroup::lm_lora, *lora, *lora_init);
        }
    }
}

ag::Var MultimodalLM::embed_image(const ag::Var& features) const { return patch_embed_for_lm(features, projector_); }

ag::Var MultimodalLM::hidden_states(const TokenSequence& tokens, const ag::Var& image_embeds,
                                    std::vector<int>* expanded) const {
    const int n_patches = image_embeds.defined() ? static_cast<int>(image_embeds.rows()) : 0;
    if (!tokens.image_positions.empty() && n_patches == 0) throw UsageError("<IMAGE> token without image embeddings");
    if (tokens.image_positions.empty() && n_patches > 0) throw UsageError("image embeddings without an <IMAGE> token");
    if (n_patches > 0 && image_embeds.cols() != cfg_.d_model) throw UsageError("image embedding width mismatch");
    for (int id : tokens.ids) {
        if (id < 0 || id >= cfg_.vocab_size) throw DataError("token id " + std::to_string(id) + " outside vocabulary");
    }

    auto index = expanded_index(tokens, n_patches);
    const int length = tokens.size() - static_cast<int>(tokens.image_positions.size()) + n_patches;
    if (length == 0) throw UsageError("empty token sequence");
    if (length > cfg_.max_seq_len) {
        throw DataError("sequence length " + std::to_string(length) + " exceeds max_seq_len " +
                        std::to_string(cfg_.max_seq_len));
    }

    std::vector<ag::Var> parts;
    if (tokens.image_positions.empty()) {
        parts.push_back(ag::gather_rows(embed_, tokens.ids));
    } else {
        const auto img = static_cast<std::size_t>(tokens.image_positions.front());
        std::span<const int> ids(tokens.ids);
        if (img > 0) parts.push_back(ag::gather_rows(embed_, ids.subspan(0, img)));
        parts.push_back(image_embeds);
        if (img + 1 < ids.size()) parts.push_back(ag::gather_rows(embed_, ids.subspan(img + 1)));
    }
    ag::Var x = parts.size() == 1 ? parts.front() : ag::concat_rows(parts);
    x = ag::add(x, ag::slice_rows(pos_, 0, length));

    for (const auto& b : blocks_) {
        ag::Var h = b.ln1(x);
        ag::Var att = ag::attention(b.q(h), b.k(h), b.v(h), cfg_.n_heads, 1, true);
        x = ag::add(x, b.o(att));
        h = b.ln2(x);
        x = ag::add(x, b.fc2(ag::gelu(b.fc1(h))));
    }
    if (expanded) *expanded = std::move(index);
    return final_ln_(x);
}

ag::Var MultimodalLM::logits_for(const ag::Var& hidden, std::span<const int> rows) const {
    return ag::matmul_nt(ag::gather_rows(hidden, rows), head_);
}

LMOutput MultimodalLM::forward(const TokenSequence& tokens, const ag::Var& image_embeds) const {
    LMOutput out;
    out.hidden = hidden_states(tokens, image_embeds, &out.expanded);
    out.logits = ag::matmul_nt(out.hidden, head_);
    return out;
}

Generation MultimodalLM::generate(const TokenSequence& prompt, const ag::Var& image_embeds, int max_new,
                                  const Vocabulary& vocab) const {
    ag::NoGradGuard guard;
    Generation g;
    g.tokens = prompt;
    const int eos = vocab.eos_id();
    const int seg = vocab.contains(tokens::kSeg) ? vocab.seg_id() : -1;
    const int prompt_len = prompt.size();
    std::vector<int> expanded;
    std::vector<int> pending;  // <SEG> positions whose hidden state is not yet computed

    auto collect = [&](const ag::Mat& hidden) {
        for (int pos : pending) {
            const int row = expanded[static_cast<std::size_t>(pos)];
            SegEmbedding e;
            e.raw = hidden.row(row);
            e.source_position = pos;
            e.expanded_position = row;
            g.segs.push_back(std::move(e));
        }
        pending.clear();
    };

    const int n_patches = image_embeds.defined() ? static_cast<int>(image_embeds.rows()) : 0;
    const int overhead = n_patches - static_cast<int>(prompt.image_positions.size());
    bool finished = false;
    while (!finished && g.n_generated < max_new && g.tokens.size() + overhead < cfg_.max_seq_len) {
        ag::Var hidden = hidden_states(g.tokens, image_embeds, &expanded);
        collect(hidden.value());
        const int last = static_cast<int>(hidden.rows()) - 1;
        const ag::RowVec logits = hidden.value().row(last) * head_.value().transpose();
        Eigen::Index best = 0;
        logits.maxCoeff(&best);
        const int next = static_cast<int>(best);
        g.tokens.ids.push_back(next);
        ++g.n_generated;
        if (next == seg) pending.push_back(g.tokens.size() - 1);
        finished = next == eos;
    }
    if (!pending.empty()) {
        ag::Var hidden = hidden_states(g.tokens, image_embeds, &expanded);
        collect(hidden.value());
    }
    if (g.n_generated > 0) {
        g.tokens.role_spans.push_back({prompt_len, g.tokens.size(), Role::assistant});
    }
    g.tokens.refresh_positions(vocab);
    return g;
}

void MultimodalLM::resize_embeddings(int new_vocab_size) {
    const int old = cfg_.vocab_size;
    if (new_vocab_size < old) {
        throw UsageError("cannot shrink vocabulary from " + std::to_string(old) + " to " + std::to_string(new_vocab_size));
    }
    if (new_vocab_size == old) return;
    for (ag::Var* table : {&embed_, &head_}) {
        ag::Mat grown(new_vocab_size, cfg_.d_model);
        grown.topRows(old) = table->value();
        const ag::RowVec mean = table->value().colwise().mean();
        for (int r = old; r < new_vocab_size; ++r) grown.row(r) = mean;
        table->mutable_value() = std::move(grown);
        table->zero_grad();
    }
    cfg_.vocab_size = new_vocab_size;
}

}  // namespace seglm
