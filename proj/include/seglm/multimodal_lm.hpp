#pragma once

#include <optional>
#include <span>
#include <vector>

#include "seglm/autograd.hpp"
#include "seglm/nn.hpp"
#include "seglm/tokenizer.hpp"

namespace seglm {

struct LMConfig {
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int vocab_size = 0;
    int max_seq_len = 256;
    int d_vis = 64;
    double init_scale = 0.02;  // stddev of embeddings and residual-branch outputs

    void validate() const;
};

/// Hidden state at one <SEG> token plus its projection into the decoder's
/// prompt space.
struct SegEmbedding {
    ag::RowVec raw;
    ag::RowVec projected;  // filled by the projection; empty until then
    int source_position = 0;    // index in the unexpanded token sequence
    int expanded_position = 0;  // row in the hidden-state matrix
};

/// Position of every original token in the sequence with the single <IMAGE>
/// token replaced by n_patches rows. The <IMAGE> entry points at its first row.
std::vector<int> expanded_index(const TokenSequence& tokens, int n_patches);

/// One entry per <SEG> position, in textual order.
std::vector<SegEmbedding> extract_seg_embeddings(const TokenSequence& tokens, const ag::Mat& hidden,
                                                 std::span<const int> expanded);

struct LMOutput {
    ag::Var hidden;  // [expanded length × d_model], after the final norm
    ag::Var logits;  // [expanded length × vocab]
    std::vector<int> expanded;
};

struct Generation {
    TokenSequence tokens;               // prompt + generated ids
    std::vector<SegEmbedding> segs;     // raw hidden states from the generation pass
    int n_generated = 0;
};

/// Causal pre-norm transformer over interleaved token and image-patch rows.
class MultimodalLM {
  public:
    MultimodalLM(const LMConfig& cfg, ParameterStore& store, Initializer& init,
                 const std::optional<LoraConfig>& lora = std::nullopt, Initializer* lora_init = nullptr);

    const LMConfig& config() const { return cfg_; }
    const Linear& projector() const { return projector_; }
    ag::Var embed_tokens() const { return embed_; }
    ag::Var lm_head() const { return head_; }

    ag::Var embed_image(const ag::Var& features) const;

    /// Final-norm hidden states. image_embeds must have one row per patch;
    /// it may be empty if the sequence has no <IMAGE> token.
    ag::Var hidden_states(const TokenSequence& tokens, const ag::Var& image_embeds,
                          std::vector<int>* expanded = nullptr) const;
    /// Logits for the selected hidden rows.
    ag::Var logits_for(const ag::Var& hidden, std::span<const int> rows) const;
    LMOutput forward(const TokenSequence& tokens, const ag::Var& image_embeds) const;

    /// Greedy decoding without caching. Stops after </s> or max_new tokens.
    Generation generate(const TokenSequence& prompt, const ag::Var& image_embeds, int max_new,
                        const Vocabulary& vocab) const;

    /// Grows embed_tokens and lm_head to new_vocab_size; new rows are the mean
    /// of the existing ones. Existing rows are untouched.
    void resize_embeddings(int new_vocab_size);

  private:
    struct Block {
        LayerNorm ln1;
        Linear q, k, v, o;
        LayerNorm ln2;
        Linear fc1, fc2;
    };

    LMConfig cfg_;
    ag::Var embed_;  // [vocab × d_model]
    ag::Var pos_;    // [max_seq_len × d_model]
    Linear projector_;
    std::vector<Block> blocks_;
    LayerNorm final_ln_;
    ag::Var head_;  // [vocab × d_model]
};

}  // namespace seglm
