#include <gtest/gtest.h>

#include <set>

#include "seglm/errors.hpp"
#include "seglm/synthdata.hpp"
#include "seglm/tokenizer.hpp"
#include "test_util.hpp"

using namespace seglm;

namespace {

Vocabulary base_vocab() { return Vocabulary::from_corpus(synth::template_strings()); }

}  // namespace

TEST(Tokenizer, VocabularyIsBijectiveAndContiguous) {
    Vocabulary v = base_vocab().expand(std::string(tokens::kSeg));
    std::set<std::string> seen;
    for (int i = 0; i < v.size(); ++i) {
        const std::string& t = v.token(i);
        EXPECT_TRUE(seen.insert(t).second) << t;
        EXPECT_EQ(v.id(t), i);
    }
    for (auto s : {tokens::kPad, tokens::kBos, tokens::kEos, tokens::kImage, tokens::kSeg, tokens::kUser,
                   tokens::kAssistant}) {
        EXPECT_TRUE(v.contains(s));
    }
}

TEST(Tokenizer, SegIsAtomic) {
    Vocabulary v = base_vocab().expand(std::string(tokens::kSeg));
    TokenSequence s = encode("It is <SEG>.", v);
    ASSERT_EQ(s.seg_positions.size(), 1u);
    EXPECT_EQ(s.ids[static_cast<std::size_t>(s.seg_positions[0])], v.seg_id());
    EXPECT_EQ(s.size(), 4);
}

TEST(Tokenizer, ImageIsAtomic) {
    Vocabulary v = base_vocab();
    TokenSequence s = encode("<IMAGE>", v);
    ASSERT_EQ(s.size(), 1);
    EXPECT_EQ(s.image_positions, std::vector<int>{0});
}

TEST(Tokenizer, TemplateStringsRoundTrip) {
    Vocabulary v = base_vocab().expand(std::string(tokens::kSeg));
    for (const auto& t : synth::template_strings()) {
        TokenSequence s = encode(t, v);
        for (int id : s.ids) ASSERT_NE(id, v.unk_id()) << t;
        EXPECT_EQ(decode(s.ids, v), normalize(t));
    }
    EXPECT_EQ(normalize("  Can   you SEGMENT the circle ? "), "can you segment the circle?");
}

TEST(Tokenizer, SegPositionsMatchIds) {
    Vocabulary v = base_vocab().expand(std::string(tokens::kSeg));
    TokenSequence s = encode_conversation("Can you segment the red circle and the blue square in this image?",
                                          "Sure, they are <SEG> and <SEG>.", v);
    std::vector<int> expected;
    for (int i = 0; i < s.size(); ++i) {
        if (s.ids[static_cast<std::size_t>(i)] == v.seg_id()) expected.push_back(i);
    }
    EXPECT_EQ(s.seg_positions, expected);
    EXPECT_EQ(s.seg_positions.size(), 2u);
    ASSERT_EQ(s.image_positions, std::vector<int>{2});
    // user span then assistant span, covering everything without overlap
    ASSERT_EQ(s.role_spans.size(), 2u);
    EXPECT_EQ(s.role_spans[0].start, 0);
    EXPECT_EQ(s.role_spans[0].end, s.role_spans[1].start);
    EXPECT_EQ(s.role_spans[1].end, s.size());
    EXPECT_EQ(s.role_spans[1].role, Role::assistant);
    EXPECT_EQ(v.token(s.ids[static_cast<std::size_t>(s.role_spans[1].start - 1)]), tokens::kAssistant);
    EXPECT_EQ(s.ids.back(), v.eos_id());
}

TEST(Tokenizer, DecodeEdgeCases) {
    Vocabulary v = base_vocab();
    EXPECT_EQ(decode(std::vector<int>{}, v), "");
    EXPECT_THROW(decode(std::vector<int>{1000000}, v), UsageError);
    EXPECT_EQ(encode("zebra", v).ids, std::vector<int>{v.unk_id()});
}

TEST(Tokenizer, ExpansionKeepsOldIds) {
    std::vector<std::string> words;
    for (int i = 0; i < 193; ++i) words.push_back("w" + std::to_string(i));
    Vocabulary v = Vocabulary::build(words);
    ASSERT_EQ(v.size(), 200);
    Vocabulary e = v.expand(std::string(tokens::kSeg));
    EXPECT_EQ(e.size(), 201);
    EXPECT_EQ(e.seg_id(), 200);
    for (int i = 0; i < v.size(); ++i) EXPECT_EQ(e.token(i), v.token(i));
    EXPECT_THROW(e.expand(std::string(tokens::kSeg)), UsageError);
    EXPECT_THROW(v.seg_id(), UsageError);

    Vocabulary base = base_vocab();
    Vocabulary grown = base.expand(std::string(tokens::kSeg));
    for (const auto& t : synth::template_strings()) {
        if (t.find("<SEG>") != std::string::npos) continue;
        EXPECT_EQ(encode(t, base).ids, encode(t, grown).ids);
    }
}

TEST(Tokenizer, SaveLoad) {
    seglm::testing::TempDir dir("vocab");
    Vocabulary v = base_vocab().expand(std::string(tokens::kSeg));
    v.save(dir.path() / "vocab.txt");
    EXPECT_TRUE(Vocabulary::load(dir.path() / "vocab.txt") == v);
    EXPECT_THROW(Vocabulary::load(dir.path() / "absent.txt"), DataError);
}
