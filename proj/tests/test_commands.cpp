#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mfn/checkpoint.hpp"
#include "mfn/commands.hpp"
#include "mfn/metrics.hpp"
#include "mfn/raster.hpp"

using namespace mfn;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string slurp_text(const fs::path& p) {
    const auto b = slurp(p);
    return {b.begin(), b.end()};
}

class Workdir : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / ("mfn_cmd_" + std::string(info->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string p(const std::string& name) const { return (dir / name).string(); }

    // A pack and model small enough to train in a couple of seconds.
    RunConfig tiny() const {
        RunConfig c;
        c.set("tiles_dir", p("tiles"));
        c.set("synth_tiles", "3");
        c.set("synth_size", "64");
        c.set("seed", "5");
        c.set("width_scale", "0.125");
        c.set("patch_size", "32");
        c.set("train_stride", "32");
        c.set("test_stride", "16");
        c.set("epochs", "1");
        c.set("batch_size", "4");
        c.set("checkpoint", p("model.mfn"));
        c.set("log", p("train.log"));
        c.set("predictions_dir", p("pred"));
        c.set("report", p("report.txt"));
        return c;
    }

    fs::path dir;
};

int run_cli(const std::string& args) {
    const std::string cmd = std::string(MFN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Folds, SplitRule) {
    EXPECT_EQ(fold_indices(6, 0, true), (std::vector<std::size_t>{0, 3}));
    EXPECT_EQ(fold_indices(6, 0, false), (std::vector<std::size_t>{1, 2, 4, 5}));
    EXPECT_EQ(fold_indices(8, 2, true), (std::vector<std::size_t>{2, 5}));
    EXPECT_EQ(fold_indices(4, -1, true).size(), 4u);
    EXPECT_EQ(fold_indices(4, -1, false).size(), 4u);
    EXPECT_THROW(fold_indices(4, 3, true), ConfigError);
}

TEST(ModelConfigFromRun, WidthsAndBranches) {
    RunConfig c;
    c.set("width_scale", "0.25");
    ModelConfig m = model_config(c);
    EXPECT_EQ(m.widths, scaled_widths(0.25));
    EXPECT_EQ(m.branches, 0);
    c.set("architecture", "segnet_ms");
    EXPECT_EQ(model_config(c).branches, 3);
    c.set("architecture", "residual_correction");
    EXPECT_THROW(build_model(c), ConfigError);
    c.set("architecture", "alexnet");
    EXPECT_THROW(model_config(c), ConfigError);
}

TEST(TrainOptionsFromRun, DefaultsAndValidation) {
    RunConfig c;
    const TrainOptions o = train_options(c);
    EXPECT_DOUBLE_EQ(o.sgd.base_lr, 0.01);
    EXPECT_EQ(o.sgd.batch_size, 10);
    EXPECT_EQ(o.sgd.milestones, (std::vector<int>{5, 10, 15}));
    c.set("patch_size", "100");
    EXPECT_THROW(train_options(c), ConfigError);
    c.set("patch_size", "128");
    c.set("milestones", "5,x");
    EXPECT_THROW(train_options(c), ConfigError);
}

TEST(Preview, PaletteAndHeader) {
    LabelMap m(1, 1, 3);
    m.data = {0, 3, 255};
    const auto ppm = encode_preview(m);
    const std::string head = "P6\n3 1\n255\n";
    ASSERT_EQ(ppm.size(), head.size() + 9);
    EXPECT_EQ(std::string(ppm.begin(), ppm.begin() + static_cast<std::ptrdiff_t>(head.size())), head);
    const std::uint8_t* px = ppm.data() + head.size();
    EXPECT_EQ(px[0], 255); // white
    EXPECT_EQ(std::vector<int>(px + 3, px + 6), (std::vector<int>{0, 255, 0})); // tree green
    EXPECT_EQ(std::vector<int>(px + 6, px + 9), (std::vector<int>{0, 0, 0}));
}

TEST_F(Workdir, SynthWritesPackDeterministically) {
    RunConfig c = tiny();
    c.set("synth_tiles", "4");
    std::ostringstream out;
    EXPECT_EQ(cmd_synth(c, out), 0);
    std::size_t mrt = 0;
    for (const auto& e : fs::directory_iterator(p("tiles"))) mrt += e.path().extension() == ".mrt";
    EXPECT_EQ(mrt, 12u);
    EXPECT_TRUE(fs::exists(p("tiles/manifest.txt")));
    EXPECT_NE(slurp_text(p("tiles/manifest.txt")).find("seed 5"), std::string::npos);
    const auto first = slurp(p("tiles/tile_002_composite.mrt"));
    fs::remove_all(p("tiles"));
    cmd_synth(c, out);
    EXPECT_EQ(slurp(p("tiles/tile_002_composite.mrt")), first);
    EXPECT_EQ(read_manifest(p("tiles")).size(), 4u);
    c.set("synth_size", "250");
    EXPECT_THROW(cmd_synth(c, out), ArgumentError);
}

TEST_F(Workdir, EvaluateGroundTruthAgainstItself) {
    RunConfig c = tiny();
    std::ostringstream out;
    cmd_synth(c, out);
    fs::create_directories(p("pred"));
    for (const TileEntry& e : read_manifest(p("tiles")))
        fs::copy_file(p("tiles/" + e.label), p("pred/" + e.name + "_pred.mrt"));
    c.set("fold", "-1");
    ASSERT_EQ(cmd_evaluate(c, out), 0);
    const std::string r3 = slurp_text(p("report.txt"));
    EXPECT_NE(r3.find("overall_accuracy=1.000000"), std::string::npos) << r3;
    for (const auto& name : default_class_names(6)) EXPECT_NE(r3.find("f1." + name + "="), std::string::npos);
    auto valid = [](const std::string& r) {
        const auto at = r.find("valid_pixels=");
        return std::stoull(r.substr(at + 13));
    };
    c.set("erosion_radius", "0");
    cmd_evaluate(c, out);
    const std::string r0 = slurp_text(p("report.txt"));
    EXPECT_EQ(valid(r0), 3u * 64 * 64);
    EXPECT_LT(valid(r3), valid(r0));
}

TEST_F(Workdir, EvaluateRejectsMismatchedPrediction) {
    RunConfig c = tiny();
    std::ostringstream out;
    cmd_synth(c, out);
    fs::create_directories(p("pred"));
    c.set("fold", "0");
    write_mrt(p("pred/tile_000_pred.mrt"), label_tile(LabelMap(1, 32, 32)));
    EXPECT_THROW(cmd_evaluate(c, out), DataError);
}

TEST_F(Workdir, TrainPredictEndToEnd) {
    RunConfig c = tiny();
    c.set("fold", "0");
    std::ostringstream out;
    cmd_synth(c, out);
    ASSERT_EQ(cmd_train(c, out), 0);
    const auto ckpt = slurp(p("model.mfn"));
    ASSERT_GT(ckpt.size(), 4u);
    EXPECT_EQ(std::string(ckpt.begin(), ckpt.begin() + 4), "MFN1");
    const std::string log = slurp_text(p("train.log"));
    EXPECT_EQ(log.rfind("0\t0.01\t", 0), 0u) << log;

    ASSERT_EQ(cmd_predict(c, out), 0);
    // Fold 0 of 3 tiles validates tile 0 only.
    EXPECT_TRUE(fs::exists(p("pred/tile_000_pred.mrt")));
    EXPECT_TRUE(fs::exists(p("pred/tile_000_preview.ppm")));
    EXPECT_FALSE(fs::exists(p("pred/tile_001_pred.mrt")));
    const RasterTile prob = read_mrt(p("pred/tile_000_prob.mrt"));
    ASSERT_EQ(prob.channels().size(), 6u);
    EXPECT_EQ(prob.channels()[0].role, Role::SCORE);

    // The written map equals an explicit per-window softmax stitched by the oracle path.
    auto model = load_checkpoint(p("model.mfn"));
    model->set_training(false);
    const std::vector<TileSet> tiles = load_tiles(p("tiles"));
    const TileSet& t = tiles[0];
    const PatchGrid g = patch_grid(64, 64, 32, 16);
    std::vector<Tensor4> windows;
    for (const auto& [r, col] : g.origins()) {
        Tensor4 x(Shape{1, 3, 32, 32});
        const auto roles = modality_roles(Modality::optical);
        copy_window(t.optical, roles, r, col, 32, x, 0);
        windows.push_back(softmax_channels(model->forward(std::span(&x, 1)).scores));
    }
    const Tensor4 oracle = stitch_predictions(windows, g);
    for (int ch = 0; ch < 6; ++ch)
        for (std::size_t i = 0; i < 64 * 64; ++i)
            ASSERT_NEAR(prob.channels()[ch].f32()[i], oracle.values()[ch * 64 * 64 + i], 1e-5);
    EXPECT_EQ(label_map(read_mrt(p("pred/tile_000_pred.mrt"))).data, argmax_channel(oracle).data);

    // Full coverage at stride = patch as well.
    const Tensor4 coarse = predict_probabilities(*model, t, 32, 32);
    for (std::size_t i = 0; i < 64 * 64; ++i) {
        double s = 0;
        for (int ch = 0; ch < 6; ++ch) s += coarse.values()[ch * 64 * 64 + i];
        ASSERT_NEAR(s, 1.0, 1e-5);
    }
}

TEST_F(Workdir, TrainAndPredictAreDeterministic) {
    RunConfig c = tiny();
    c.set("fold", "1");
    c.set("architecture", "fusenet_virtual");
    std::ostringstream out;
    cmd_synth(c, out);
    cmd_train(c, out);
    const auto a = slurp(p("model.mfn"));
    cmd_train(c, out);
    EXPECT_EQ(slurp(p("model.mfn")), a);
    cmd_predict(c, out);
    const auto pa = slurp(p("pred/tile_001_pred.mrt"));
    cmd_predict(c, out);
    EXPECT_EQ(slurp(p("pred/tile_001_pred.mrt")), pa);
}

TEST_F(Workdir, ResidualCorrectionFromBaseCheckpoints) {
    RunConfig c = tiny();
    c.set("fold", "0");
    std::ostringstream out;
    cmd_synth(c, out);
    cmd_train(c, out);
    fs::rename(p("model.mfn"), p("optical.mfn"));
    c.set("modality", "composite");
    cmd_train(c, out);
    fs::rename(p("model.mfn"), p("composite.mfn"));
    RunConfig rc = c;
    rc.set("architecture", "residual_correction");
    rc.set("base_checkpoints", p("optical.mfn"));
    EXPECT_THROW(cmd_train(rc, out), ConfigError);
    rc.set("base_checkpoints", p("optical.mfn") + "," + p("missing.mfn"));
    EXPECT_THROW(cmd_train(rc, out), ConfigError);
    rc.set("base_checkpoints", p("optical.mfn") + "," + p("composite.mfn"));
    ASSERT_EQ(cmd_train(rc, out), 0);
    auto model = load_checkpoint(p("model.mfn"));
    auto& ens = dynamic_cast<ResidualCorrection&>(*model);
    auto opt = load_checkpoint(p("optical.mfn"));
    EXPECT_EQ(state_checksum(ens.base(0).state()), state_checksum(opt->state()));
    EXPECT_EQ(cmd_predict(rc, out), 0);
}

TEST_F(Workdir, EncoderInitCopiesAndHalvesLr) {
    RunConfig c = tiny();
    c.set("fold", "0");
    std::ostringstream out;
    cmd_synth(c, out);
    cmd_train(c, out);
    RunConfig ms = c;
    ms.set("architecture", "segnet_ms");
    ms.set("encoder_init", p("model.mfn"));
    auto model = build_model(ms);
    auto src = load_checkpoint(p("model.mfn"));
    for (Parameter* q : model->parameters())
        EXPECT_EQ(q->lr_multiplier, q->name.rfind("encoder.", 0) == 0 ? 0.5f : 1.0f) << q->name;
    EXPECT_EQ(model->parameters().front()->value.values()[0], src->parameters().front()->value.values()[0]);
}

TEST_F(Workdir, PredictChecksK) {
    RunConfig c = tiny();
    c.set("fold", "0");
    std::ostringstream out;
    cmd_synth(c, out);
    cmd_train(c, out);
    c.set("k", "5");
    EXPECT_THROW(cmd_predict(c, out), CheckpointError);
}

TEST_F(Workdir, CliExitCodes) {
    EXPECT_EQ(run_cli("--help"), 0);
    EXPECT_EQ(run_cli("synth --tiles_dir " + p("t") + " --synth_tiles 1 --synth_size 64"), 0);
    EXPECT_TRUE(fs::exists(p("t/tile_000_label.mrt")));
    EXPECT_EQ(run_cli("synth --tiles_dir " + p("t") + " --synth_size 250"), 1);
    EXPECT_EQ(run_cli("synth --no_such_key 3"), 1);
    EXPECT_EQ(run_cli("frobnicate"), 1);
    EXPECT_EQ(run_cli("train --config " + p("missing.cfg")), 1);
    EXPECT_EQ(run_cli("predict --checkpoint " + p("missing.mfn") + " --tiles_dir " + p("t")), 2);
    {
        std::ofstream cfg(p("run.cfg"));
        cfg << "tiles_dir = " << p("t2") << "\nsynth_tiles = 2\nsynth_size = 32\n";
    }
    EXPECT_EQ(run_cli("synth --config " + p("run.cfg")), 0);
    EXPECT_EQ(read_manifest(p("t2")).size(), 2u);
}
