#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "seglm/datamodel.hpp"
#include "seglm/errors.hpp"
#include "seglm/png_io.hpp"
#include "seglm/synthdata.hpp"
#include "test_util.hpp"

using namespace seglm;
using seglm::testing::TempDir;
namespace fs = std::filesystem;

namespace {

DatasetSplit small_split(int n) {
    synth::Corpus c = synth::build_corpus(5, {8, 8, 4, 0});
    DatasetSplit out{SplitName::val, {}};
    for (const auto& s : c.train.samples) {
        if (static_cast<int>(out.samples.size()) == n) break;
        out.samples.push_back(s);
    }
    return out;
}

template <typename Fn>
std::string data_error_message(Fn&& fn) {
    try {
        fn();
    } catch (const DataError& e) {
        return e.what();
    }
    return "";
}

Sample multi_mask_sample() {
    for (std::uint64_t seed = 0;; ++seed) {
        synth::Scene scene;
        try {
            scene = synth::generate_scene(seed, 3);
        } catch (const DataError&) {
            continue;
        }
        auto da = synth::unique_description(scene, 0);
        auto db = synth::unique_description(scene, 1);
        if (!da || !db) continue;
        synth::QuerySpec a, b;
        a.target = *da;
        b.target = *db;
        return synth::make_multi_referring_sample(scene, a, b, "multi-0");
    }
}

}  // namespace

TEST(Datamodel, ImageValidation) {
    Image img(16, 16);
    EXPECT_NO_THROW(img.validate(8));
    EXPECT_THROW(img.validate(5), DataError);
    img.at(3, 3, 1) = 1.5;
    EXPECT_THROW(img.validate(8), DataError);
    EXPECT_THROW(Image(4, 4).validate(4), DataError);
}

TEST(Datamodel, SampleInvariants) {
    Sample s = multi_mask_sample();
    EXPECT_NO_THROW(s.validate());
    EXPECT_EQ(count_seg_literals(s.answer_text), s.target_masks.size());

    Sample missing = s;
    missing.target_masks.pop_back();
    EXPECT_THROW(missing.validate(), DataError);

    Sample vqa = s;
    vqa.kind = SampleKind::vqa;
    vqa.answer_text = "3";
    EXPECT_NE(data_error_message([&] { vqa.validate(); }).find("vqa sample must have no masks"), std::string::npos);

    Sample nonbinary = s;
    nonbinary.target_masks[0].at(0, 0) = 2;
    EXPECT_THROW(nonbinary.validate(), DataError);

    Sample shape = s;
    shape.target_masks[1] = BinaryMask(8, 8);
    EXPECT_THROW(shape.validate(), DataError);
}

TEST(Datamodel, SplitUniquenessAndDisjointness) {
    DatasetSplit a = small_split(4);
    EXPECT_NO_THROW(a.validate());
    DatasetSplit dup = a;
    dup.samples.push_back(a.samples.front());
    EXPECT_THROW(dup.validate(), DataError);

    DatasetSplit b{SplitName::test, {a.samples.back()}};
    EXPECT_THROW(check_disjoint({&a, &b}), DataError);
    b.samples.front().id = "elsewhere-0";
    EXPECT_NO_THROW(check_disjoint({&a, &b}));
}

TEST(Datamodel, SaveLoadRoundTripIsExact) {
    TempDir dir("roundtrip");
    DatasetSplit split = small_split(10);
    ASSERT_EQ(split.samples.size(), 10u);
    save_dataset(split, dir.path());
    DatasetSplit back = load_dataset(dir.path());
    EXPECT_EQ(back.samples.size(), 10u);
    EXPECT_TRUE(back == split);
}

TEST(Datamodel, EmptySplitWritesEmptyManifest) {
    TempDir dir("empty");
    save_dataset(DatasetSplit{SplitName::test, {}}, dir.path());
    std::ifstream in(dir.path() / "manifest.jsonl");
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_TRUE(content.empty());
    EXPECT_TRUE(load_dataset(dir.path()).samples.empty());
}

TEST(Datamodel, TwoMasksGiveOrderedFiles) {
    TempDir dir("multi");
    Sample s = multi_mask_sample();
    save_dataset(DatasetSplit{SplitName::train, {s}}, dir.path());
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir.path() / "masks")) files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    ASSERT_EQ(files, (std::vector<std::string>{"multi-0_0.png", "multi-0_1.png"}));
    DatasetSplit back = load_dataset(dir.path());
    EXPECT_EQ(back.samples[0].target_masks[0], s.target_masks[0]);
    EXPECT_EQ(back.samples[0].target_masks[1], s.target_masks[1]);
}

TEST(Datamodel, LoadRejectsHalfValuedMask) {
    TempDir dir("halfmask");
    DatasetSplit split = small_split(2);
    save_dataset(split, dir.path());
    const std::string id = split.samples[0].id;
    png::Raster r = png::read(dir.path() / "masks" / (id + "_0.png"));
    r.data[5] = 128;  // 0.5 in unit scale
    png::write(dir.path() / "masks" / (id + "_0.png"), r);
    const std::string msg = data_error_message([&] { load_dataset(dir.path()); });
    EXPECT_NE(msg.find("non-binary mask"), std::string::npos);
    EXPECT_NE(msg.find(id), std::string::npos);
}

TEST(Datamodel, LoadRejectsVqaWithMaskFile) {
    TempDir dir("vqamask");
    DatasetSplit split = small_split(1);
    save_dataset(split, dir.path());
    // rewrite the single record as a vqa sample that still lists its mask
    std::ifstream in(dir.path() / "manifest.jsonl");
    std::string line;
    std::getline(in, line);
    in.close();
    auto rec = nlohmann::json::parse(line);
    rec["kind"] = "vqa";
    rec["answer_text"] = "3";
    std::ofstream(dir.path() / "manifest.jsonl") << rec.dump() << '\n';
    const std::string msg = data_error_message([&] { load_dataset(dir.path()); });
    EXPECT_NE(msg.find("vqa sample must have no masks"), std::string::npos);
    EXPECT_NE(msg.find(split.samples[0].id), std::string::npos);
}

TEST(Datamodel, LoadReportsMissingFilesAndDuplicates) {
    TempDir dir("missing");
    DatasetSplit split = small_split(2);
    save_dataset(split, dir.path());
    fs::remove(dir.path() / "images" / (split.samples[1].id + ".png"));
    std::string msg = data_error_message([&] { load_dataset(dir.path()); });
    EXPECT_NE(msg.find("missing file"), std::string::npos);
    EXPECT_NE(msg.find(split.samples[1].id), std::string::npos);

    TempDir dup_dir("dup");
    save_dataset(split, dup_dir.path());
    std::ifstream in(dup_dir.path() / "manifest.jsonl");
    std::string first;
    std::getline(in, first);
    in.close();
    std::ofstream(dup_dir.path() / "manifest.jsonl", std::ios::app) << first << '\n';
    msg = data_error_message([&] { load_dataset(dup_dir.path()); });
    EXPECT_NE(msg.find("duplicate id"), std::string::npos);

    TempDir shape_dir("shape");
    save_dataset(split, shape_dir.path());
    png::Raster small{8, 8, 1, std::vector<std::uint8_t>(64, 0)};
    png::write(shape_dir.path() / "masks" / (split.samples[0].id + "_0.png"), small);
    msg = data_error_message([&] { load_dataset(shape_dir.path()); });
    EXPECT_NE(msg.find("shape mismatch"), std::string::npos);

    EXPECT_THROW(load_dataset(dir.path() / "nowhere"), DataError);
}

TEST(Datamodel, EnumStringsRoundTrip) {
    for (auto k : {SampleKind::semantic, SampleKind::referring, SampleKind::reasoning, SampleKind::vqa}) {
        EXPECT_EQ(sample_kind_from_string(to_string(k)), k);
    }
    for (auto s : {SplitName::train, SplitName::val, SplitName::test}) EXPECT_EQ(split_name_from_string(to_string(s)), s);
    EXPECT_THROW(sample_kind_from_string("caption"), DataError);
}
