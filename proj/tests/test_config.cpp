#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mfn/config.hpp"
#include "mfn/error.hpp"

using namespace mfn;

TEST(Config, Defaults) {
    const RunConfig c;
    EXPECT_EQ(c.text("architecture"), "segnet");
    EXPECT_EQ(c.integer("k"), 6);
    EXPECT_EQ(c.integer("batch_size"), 10);
    EXPECT_DOUBLE_EQ(c.real("base_lr"), 0.01);
    EXPECT_DOUBLE_EQ(c.real("momentum"), 0.9);
    EXPECT_DOUBLE_EQ(c.real("weight_decay"), 0.0005);
    EXPECT_EQ(c.list("milestones"), (std::vector<std::string>{"5", "10", "15"}));
    EXPECT_TRUE(c.flag("class_balance"));
    EXPECT_EQ(c.integer("erosion_radius"), 3);
    EXPECT_DOUBLE_EQ(c.real("encoder_lr_multiplier"), 0.5);
    EXPECT_TRUE(c.list("base_checkpoints").empty());
}

TEST(Config, RegistryKeysAreUnique) {
    std::set<std::string> seen;
    for (const KeyInfo& k : config_keys()) {
        EXPECT_TRUE(seen.insert(k.key).second) << k.key;
        EXPECT_NE(std::string(k.help), "");
    }
}

TEST(Config, ParseCommentsAndWhitespace) {
    const RunConfig c = parse_config("# run\n  architecture = fusenet_virtual  # inline\n\nepochs=3\nclass_balance = off\n");
    EXPECT_EQ(c.text("architecture"), "fusenet_virtual");
    EXPECT_EQ(c.integer("epochs"), 3);
    EXPECT_FALSE(c.flag("class_balance"));
    EXPECT_EQ(c.integer("k"), 6);
}

TEST(Config, ErrorsCarryLineNumbers) {
    try {
        parse_config("epochs = 2\nbogus = 1\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_config("epochs = many\n"), ConfigError);
    EXPECT_THROW(parse_config("base_lr = fast\n"), ConfigError);
    EXPECT_THROW(parse_config("class_balance = maybe\n"), ConfigError);
    EXPECT_THROW(parse_config("just words\n"), ConfigError);
}

TEST(Config, RoundTrip) {
    RunConfig c;
    c.set("architecture", "residual_correction");
    c.set("base_checkpoints", "a.mfn,b.mfn");
    c.set("width_scale", "0.25");
    const RunConfig back = parse_config(serialize_config(c));
    EXPECT_EQ(back, c);
    EXPECT_EQ(back.list("base_checkpoints"), (std::vector<std::string>{"a.mfn", "b.mfn"}));
}

TEST(Config, Overrides) {
    RunConfig c;
    apply_overrides(c, {"--epochs", "4", "--modality=composite", "--class_balance", "no"});
    EXPECT_EQ(c.integer("epochs"), 4);
    EXPECT_EQ(c.text("modality"), "composite");
    EXPECT_FALSE(c.flag("class_balance"));
    EXPECT_THROW(apply_overrides(c, {"--epochs"}), ConfigError);
    EXPECT_THROW(apply_overrides(c, {"epochs", "3"}), ConfigError);
    EXPECT_THROW(apply_overrides(c, {"--nope", "3"}), ConfigError);
}

TEST(Config, LoadFromFile) {
    const auto path = (std::filesystem::temp_directory_path() / "mfn_config_test.cfg").string();
    {
        std::ofstream f(path);
        f << "seed = 17\n";
    }
    EXPECT_EQ(load_config(path).integer("seed"), 17);
    std::filesystem::remove(path);
    EXPECT_THROW(load_config(path), ConfigError);
}
