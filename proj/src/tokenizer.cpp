#include "seglm/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>

#include "seglm/errors.hpp"

namespace seglm {

namespace {

constexpr std::array<std::string_view, 8> kAllSpecials{tokens::kPad,   tokens::kBos, tokens::kEos,  tokens::kUnk,
                                                       tokens::kImage, tokens::kSeg, tokens::kUser, tokens::kAssistant};
constexpr std::array<std::string_view, 7> kBaseSpecials{tokens::kPad,   tokens::kBos,  tokens::kEos,      tokens::kUnk,
                                                        tokens::kImage, tokens::kUser, tokens::kAssistant};

bool attaches_left(std::string_view t) {
    return t == "." || t == "," || t == "?" || t == "!" || t == ";" || t == ":";
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty() && !attaches_left(w)) out += ' ';
        out += w;
    }
    return out;
}

}  // namespace

void Vocabulary::insert(const std::string& token) {
    if (token_to_id_.count(token)) throw UsageError("duplicate token '" + token + "'");
    token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& words) {
    Vocabulary v;
    for (auto s : kBaseSpecials) v.insert(std::string(s));
    for (const auto& w : words) v.insert(w);
    return v;
}

Vocabulary Vocabulary::from_corpus(const std::vector<std::string>& texts) {
    std::set<std::string> words;
    for (const auto& t : texts) {
        for (auto& w : split_words(t)) {
            const bool special = std::find(kAllSpecials.begin(), kAllSpecials.end(), w) != kAllSpecials.end();
            if (!special) words.insert(std::move(w));
        }
    }
    return build(std::vector<std::string>(words.begin(), words.end()));
}

bool Vocabulary::contains(std::string_view token) const { return token_to_id_.count(std::string(token)) > 0; }

int Vocabulary::id(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    if (it == token_to_id_.end()) throw UsageError("unknown token '" + std::string(token) + "'");
    return it->second;
}

int Vocabulary::id_or_unk(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? unk_id() : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw UsageError("unknown token id " + std::to_string(id));
    return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::is_special(std::string_view token) const {
    return std::find(kAllSpecials.begin(), kAllSpecials.end(), token) != kAllSpecials.end();
}

Vocabulary Vocabulary::expand(const std::string& new_token) const {
    Vocabulary v = *this;
    v.insert(new_token);
    return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write vocabulary " + path.string());
    for (const auto& t : id_to_token_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read vocabulary " + path.string());
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        try {
            v.insert(line);
        } catch (const UsageError& e) {
            throw DataError(path.string() + ": " + e.what());
        }
    }
    for (auto s : kBaseSpecials) {
        if (!v.contains(s)) throw DataError(path.string() + ": missing special token " + std::string(s));
    }
    return v;
}

void TokenSequence::refresh_positions(const Vocabulary& vocab) {
    image_positions.clear();
    seg_positions.clear();
    const int image = vocab.image_id();
    const int seg = vocab.contains(tokens::kSeg) ? vocab.seg_id() : -1;
    for (int i = 0; i < size(); ++i) {
        if (ids[static_cast<std::size_t>(i)] == image) image_positions.push_back(i);
        if (ids[static_cast<std::size_t>(i)] == seg) seg_positions.push_back(i);
    }
}

std::vector<int> TokenSequence::assistant_positions() const {
    std::vector<int> out;
    for (const auto& span : role_spans) {
        if (span.role != Role::assistant) continue;
        for (int i = span.start; i < span.end; ++i) out.push_back(i);
    }
    return out;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) out.push_back(std::move(word));
        word.clear();
    };
    std::size_t i = 0;
    while (i < text.size()) {
        bool special = false;
        for (auto s : kAllSpecials) {
            if (text.substr(i, s.size()) == s) {
                flush();
                out.emplace_back(s);
                i += s.size();
                special = true;
                break;
            }
        }
        if (special) continue;
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            flush();
        } else if (std::isalnum(c)) {
            word += static_cast<char>(std::tolower(c));
        } else {
            flush();
            out.emplace_back(1, static_cast<char>(c));
        }
        ++i;
    }
    flush();
    return out;
}

TokenSequence encode(std::string_view text, const Vocabulary& vocab) {
    TokenSequence seq;
    for (const auto& w : split_words(text)) seq.ids.push_back(vocab.id_or_unk(w));
    if (!seq.ids.empty()) seq.role_spans.push_back({0, seq.size(), Role::user});
    seq.refresh_positions(vocab);
    return seq;
}

std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
    std::vector<std::string> words;
    words.reserve(ids.size());
    for (int id : ids) words.push_back(vocab.token(id));
    return join(words);
}

std::string normalize(std::string_view text) { return join(split_words(text)); }

TokenSequence encode_prompt(std::string_view instruction, const Vocabulary& vocab) {
    TokenSequence seq;
    seq.ids.push_back(vocab.bos_id());
    seq.ids.push_back(vocab.id(tokens::kUser));
    seq.ids.push_back(vocab.image_id());
    for (const auto& w : split_words(instruction)) seq.ids.push_back(vocab.id_or_unk(w));
    seq.ids.push_back(vocab.id(tokens::kAssistant));
    seq.role_spans.push_back({0, seq.size(), Role::user});
    seq.refresh_positions(vocab);
    return seq;
}

TokenSequence encode_conversation(std::string_view instruction, std::string_view answer, const Vocabulary& vocab) {
    TokenSequence seq = encode_prompt(instruction, vocab);
    const int start = seq.size();
    for (const auto& w : split_words(answer)) seq.ids.push_back(vocab.id_or_unk(w));
    seq.ids.push_back(vocab.eos_id());
    seq.role_spans.push_back({start, seq.size(), Role::assistant});
    seq.refresh_positions(vocab);
    return seq;
}

}  // namespace seglm
