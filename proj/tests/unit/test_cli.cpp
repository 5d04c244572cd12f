#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "seglm/datamodel.hpp"
#include "seglm/png_io.hpp"
#include "seglm/trainer.hpp"
#include "test_util.hpp"

using namespace seglm;
using seglm::testing::random_mat;
using seglm::testing::TempDir;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result run(const std::string& args) {
    const std::string cmd = std::string(SEGLM_CLI_PATH) + " " + args + " 2>&1";
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<json> read_jsonl(const fs::path& p) {
    std::vector<json> out;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
    return out;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

const std::string kSmallCorpus =
    "--set semantic=12 --set referring=12 --set vqa=6 --set reasoning=6 --set reasoning_finetune=4 --set image_size=16";

const std::string kTinyTrain =
    "--set model.preset=tiny --set total_iters=6 --set warmup_iters=2 --set batch_per_step=2 --set grad_accum_steps=1";

}  // namespace

TEST(Cli, HelpListsFlagsAndDefaults) {
    for (const char* cmd : {"datagen", "train", "finetune", "eval", "predict"}) {
        Result r = run(std::string(cmd) + " --help");
        EXPECT_EQ(r.code, 0) << cmd;
        EXPECT_NE(r.out.find("--seed"), std::string::npos) << cmd;
        EXPECT_NE(r.out.find("--out"), std::string::npos) << cmd;
    }
    EXPECT_NE(run("train --help").out.find("total_iters = 2000"), std::string::npos);
    EXPECT_NE(run("finetune --help").out.find("total_iters = 300"), std::string::npos);
    EXPECT_NE(run("datagen --help").out.find("semantic = 100"), std::string::npos);
    EXPECT_NE(run("eval --help").out.find("[val]"), std::string::npos);
}

TEST(Cli, UsageErrorsExitOne) {
    TempDir dir("cli-usage");
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("datagen --out " + q(dir.path() / "d") + " --bogus").code, 1);
    EXPECT_EQ(run("datagen --out " + q(dir.path() / "d") + " --set nope=1").code, 1);
    EXPECT_EQ(run("datagen --out " + q(dir.path() / "d") + " --set semantic=many").code, 1);
    EXPECT_EQ(run("datagen --out " + q(dir.path() / "d") + " --set train_fraction=0.5").code, 1);
    std::ofstream(dir.path() / "bad.json") << "[1, 2]";
    EXPECT_EQ(run("datagen --out " + q(dir.path() / "d") + " --config " + q(dir.path() / "bad.json")).code, 1);
}

TEST(Cli, DatagenDeterministicAndGuarded) {
    TempDir dir("cli-datagen");
    const fs::path a = dir.path() / "a", b = dir.path() / "b";
    ASSERT_EQ(run("datagen --seed 4 --out " + q(a) + " " + kSmallCorpus).code, 0);
    ASSERT_EQ(run("datagen --seed 4 --out " + q(b) + " " + kSmallCorpus).code, 0);
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
    }
    EXPECT_GT(files.size(), 30u);
    for (const auto& f : files) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    for (const char* split : {"train", "val", "test", "reasoning_train"}) EXPECT_NO_THROW(load_dataset(a / split)) << split;
    EXPECT_EQ(load_dataset(a / "reasoning_train").samples.size(), 4u);
    EXPECT_EQ(json::parse(slurp(a / "config.json"))["seed"], 4);

    EXPECT_EQ(run("datagen --out " + q(a) + " " + kSmallCorpus).code, 1);
    EXPECT_EQ(run("datagen --force --out " + q(a) + " " + kSmallCorpus).code, 0);
    // a different seed gives a different corpus
    EXPECT_NE(slurp(a / "train" / "manifest.jsonl"), slurp(b / "train" / "manifest.jsonl"));
}

TEST(Cli, TrainLogEvalAndFinetune) {
    TempDir dir("cli-train");
    const fs::path data = dir.path() / "data", ck = dir.path() / "ck", ck2 = dir.path() / "ck2";
    ASSERT_EQ(run("datagen --seed 2 --out " + q(data) + " " + kSmallCorpus).code, 0);
    std::ofstream(dir.path() / "cfg.json") << R"({"lr": 0.001, "checkpoint_every": 3})";
    const std::string train_args =
        "train --data " + q(data) + " " + kTinyTrain + " --config " + q(dir.path() / "cfg.json") + " --seed 5 --out ";
    Result r = run(train_args + q(ck));
    ASSERT_EQ(r.code, 0) << r.out;
    ASSERT_EQ(run(train_args + q(ck2)).code, 0);

    const auto log = read_jsonl(ck / "loss_log.jsonl");
    ASSERT_EQ(log.size(), 6u);
    EXPECT_EQ(slurp(ck / "loss_log.jsonl"), slurp(ck2 / "loss_log.jsonl"));
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.total_iters = 6;
    cfg.warmup_iters = 2;
    for (std::size_t i = 0; i < log.size(); ++i) {
        const json& l = log[i];
        EXPECT_EQ(l["iter"], static_cast<int>(i));
        EXPECT_NEAR(l["lr"].get<double>(), lr_at(static_cast<int>(i), cfg), 1e-15);
        const double total = l["text"].get<double>() + 2.0 * l["bce"].get<double>() + 0.5 * l["dice"].get<double>();
        EXPECT_NEAR(l["total"].get<double>(), total, 1e-9);
    }
    const json resolved = json::parse(slurp(ck / "resolved_config.json"));
    EXPECT_EQ(resolved["seed"], 5);
    EXPECT_EQ(resolved["lr"], 0.001);
    EXPECT_EQ(resolved["model.preset"], "tiny");
    EXPECT_TRUE(fs::exists(ck / "manifest.json"));

    Result oracle = run("eval --oracle --kinds all --data " + q(data) + " --out " + q(dir.path() / "ev"));
    ASSERT_EQ(oracle.code, 0) << oracle.out;
    const json report = json::parse(slurp(dir.path() / "ev" / "report.json"));
    ASSERT_EQ(report["rows"].size(), 3u);
    EXPECT_EQ(report["rows"][0]["label"], "short query");
    EXPECT_EQ(report["rows"][1]["label"], "long query");
    EXPECT_EQ(report["rows"][2]["label"], "overall");
    EXPECT_EQ(report["rows"][2]["giou"], 1.0);
    EXPECT_EQ(report["rows"][2]["ciou"], 1.0);

    Result ev = run("eval --checkpoint " + q(ck) + " --data " + q(data) + " --split test --max-new 6");
    ASSERT_EQ(ev.code, 0) << ev.out;
    EXPECT_NE(ev.out.find("overall"), std::string::npos);
    EXPECT_FALSE(read_jsonl(ck / "eval_test" / "records.jsonl").empty());
    EXPECT_EQ(run("eval --checkpoint " + q(dir.path() / "nowhere") + " --data " + q(data)).code, 2);
    EXPECT_EQ(run("eval --data " + q(data)).code, 1);

    Result ft = run("finetune --checkpoint " + q(ck) + " --data " + q(data) + " --set total_iters=2 --out " +
                    q(dir.path() / "ft"));
    ASSERT_EQ(ft.code, 0) << ft.out;
    EXPECT_EQ(read_jsonl(dir.path() / "ft" / "loss_log.jsonl").size(), 2u);
    EXPECT_EQ(run("finetune --checkpoint " + q(dir.path() / "nowhere") + " --data " + q(data) + " --out " +
                  q(dir.path() / "ft2"))
                  .code,
              2);
}

TEST(Cli, NumericalFailureExitsThree) {
    TempDir dir("cli-nan");
    const fs::path data = dir.path() / "data";
    ASSERT_EQ(run("datagen --out " + q(data) + " " + kSmallCorpus).code, 0);
    Result r = run("train --data " + q(data) + " " + kTinyTrain + " --set lr=1e300 --set grad_clip=0 --out " +
                   q(dir.path() / "ck"));
    EXPECT_EQ(r.code, 3) << r.out;
}

TEST(Cli, PredictWritesOverlaysThatReblendFromRawMasks) {
    TempDir dir("cli-predict");
    // a tiny model steered to answer with <SEG> at every step
    auto model = SegModel::create(ModelConfig::tiny(), default_base_vocabulary());
    const int d = model->config().lm.d_model;
    ag::Var beta = model->params().var("lm.final_ln.beta");
    beta.mutable_value() = random_mat(1, d, 3);
    model->params().var("lm.final_ln.gamma").mutable_value().setConstant(0.05);
    model->lm().lm_head().mutable_value().setZero();
    model->lm().lm_head().mutable_value().row(model->vocab().seg_id()) = beta.value();
    save_checkpoint(dir.path() / "ck", *model, nullptr, {{"run", {{"image_size", 16}}}});

    Image img(16, 16);
    for (std::size_t i = 0; i < img.pixels().size(); ++i) img.pixels()[i] = static_cast<double>(i % 251) / 250.0;
    write_image(dir.path() / "in.png", img);

    const fs::path out = dir.path() / "pred";
    Result r = run("predict --checkpoint " + q(dir.path() / "ck") + " --image " + q(dir.path() / "in.png") +
                   " --query 'Can you segment the circle in this image?' --max-new 2 --out " + q(out));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("<SEG> <SEG>"), std::string::npos) << r.out;
    const png::Raster input = png::read(out / "input.png");
    const double colors[2][3] = {{1, 0, 0}, {0, 1, 0}};
    for (int k = 0; k < 2; ++k) {
        const png::Raster mask = png::read(out / ("mask_" + std::to_string(k) + ".png"));
        const png::Raster overlay = png::read(out / ("overlay_" + std::to_string(k) + ".png"));
        ASSERT_EQ(overlay.data.size(), input.data.size());
        for (std::size_t i = 0; i < input.data.size(); ++i) {
            const bool on = mask.data[i] != 0;
            const double c = colors[k][i % 3];
            const auto want = on ? static_cast<std::uint8_t>(std::lround(255.0 * (0.5 * input.data[i] / 255.0 + 0.5 * c)))
                                 : input.data[i];
            ASSERT_EQ(overlay.data[i], want) << "overlay " << k << " byte " << i;
        }
    }
    EXPECT_FALSE(fs::exists(out / "mask_2.png"));

    // a model that never emits <SEG>: text only and an explicit notice
    model->lm().lm_head().mutable_value().setZero();
    save_checkpoint(dir.path() / "plain", *model, nullptr, {{"run", {{"image_size", 16}}}});
    Result none = run("predict --checkpoint " + q(dir.path() / "plain") + " --image " + q(dir.path() / "in.png") +
                      " --query 'What shape is the red object?' --max-new 0 --out " + q(dir.path() / "none"));
    ASSERT_EQ(none.code, 0) << none.out;
    EXPECT_NE(none.out.find("no <SEG>"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir.path() / "none" / "mask_0.png"));

    Result resized = run("predict --checkpoint " + q(dir.path() / "ck") + " --image " + q(dir.path() / "in.png") +
                         " --query 'hi' --max-new 1 --out " + q(dir.path() / "r"));
    EXPECT_EQ(resized.out.find("warning"), std::string::npos);
    std::ofstream(dir.path() / "junk.png") << "not a png";
    EXPECT_EQ(run("predict --checkpoint " + q(dir.path() / "ck") + " --image " + q(dir.path() / "junk.png") +
                  " --query x --out " + q(dir.path() / "j"))
                  .code,
              2);
}
