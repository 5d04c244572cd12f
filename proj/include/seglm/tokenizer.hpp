#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace seglm {

namespace tokens {
inline constexpr std::string_view kPad = "<pad>";
inline constexpr std::string_view kBos = "<s>";
inline constexpr std::string_view kEos = "</s>";
inline constexpr std::string_view kUnk = "<unk>";
inline constexpr std::string_view kImage = "<IMAGE>";
inline constexpr std::string_view kSeg = "<SEG>";
inline constexpr std::string_view kUser = "USER:";
inline constexpr std::string_view kAssistant = "ASSISTANT:";
}  // namespace tokens

/// Closed word-level vocabulary. Ids are contiguous from 0 and never remapped
/// by expansion.
class Vocabulary {
  public:
    /// Specials (except <SEG>) take ids 0..6, followed by the words in order.
    static Vocabulary build(const std::vector<std::string>& words);
    /// Words gathered from the given texts, sorted, deduplicated.
    static Vocabulary from_corpus(const std::vector<std::string>& texts);

    int size() const { return static_cast<int>(id_to_token_.size()); }
    bool contains(std::string_view token) const;
    int id(std::string_view token) const;  // throws for unknown tokens
    int id_or_unk(std::string_view token) const;
    const std::string& token(int id) const;  // throws for unknown ids
    bool is_special(std::string_view token) const;

    int pad_id() const { return id(tokens::kPad); }
    int bos_id() const { return id(tokens::kBos); }
    int eos_id() const { return id(tokens::kEos); }
    int unk_id() const { return id(tokens::kUnk); }
    int image_id() const { return id(tokens::kImage); }
    int seg_id() const { return id(tokens::kSeg); }  // throws before expansion

    /// Appends a token; existing ids are unchanged.
    Vocabulary expand(const std::string& new_token) const;

    /// One token per line, line number = id.
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    const std::vector<std::string>& tokens() const { return id_to_token_; }
    bool operator==(const Vocabulary& o) const { return id_to_token_ == o.id_to_token_; }

  private:
    void insert(const std::string& token);
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

enum class Role { user, assistant };

struct RoleSpan {
    int start = 0;  // inclusive
    int end = 0;    // exclusive
    Role role = Role::user;
    bool operator==(const RoleSpan&) const = default;
};

struct TokenSequence {
    std::vector<int> ids;
    std::vector<RoleSpan> role_spans;
    std::vector<int> image_positions;
    std::vector<int> seg_positions;

    int size() const { return static_cast<int>(ids.size()); }
    /// Recomputes image/seg positions from ids.
    void refresh_positions(const Vocabulary& vocab);
    /// Positions covered by an assistant span.
    std::vector<int> assistant_positions() const;
    bool operator==(const TokenSequence&) const = default;
};

/// Splits into atomic specials, lowercased words and single punctuation marks.
std::vector<std::string> split_words(std::string_view text);

TokenSequence encode(std::string_view text, const Vocabulary& vocab);
std::string decode(std::span<const int> ids, const Vocabulary& vocab);
/// Lowercasing and whitespace normalization matching decode(encode(text)).
std::string normalize(std::string_view text);

/// "<s> USER: <IMAGE> {instruction} ASSISTANT:" as the user span.
TokenSequence encode_prompt(std::string_view instruction, const Vocabulary& vocab);
/// Prompt followed by "{answer} </s>" as the assistant span.
TokenSequence encode_conversation(std::string_view instruction, std::string_view answer, const Vocabulary& vocab);

}  // namespace seglm
