#include <gtest/gtest.h>

#include <fstream>

#include "ssam/checkpoint.hpp"
#include "ssam/config.hpp"

using namespace ssam;
using namespace ssam::pipeline;
namespace fs = std::filesystem;

TEST(Config, DeskDefaultsAndPaperSchedule) {
  TrainConfig c;
  EXPECT_EQ(c.stage1.epochs, 30u);
  EXPECT_DOUBLE_EQ(c.stage1.lr, 1e-3);
  EXPECT_DOUBLE_EQ(c.stage1.weight_decay, 0.01);
  EXPECT_DOUBLE_EQ(c.stage2.beta2, 0.999);
  c.full_schedule();
  EXPECT_EQ(c.stage1.epochs, 100u);
  EXPECT_EQ(c.stage1.batch, 32u);
  EXPECT_EQ(c.stage2.epochs, 400u);
  EXPECT_EQ(c.stage2.batch, 16u);
}

TEST(Config, UnknownKeyAndBadValue) {
  TrainConfig c;
  EXPECT_THROW(c.set("stage1.momentum", "0.9"), ConfigError);
  EXPECT_THROW(c.set("colour", "red"), ConfigError);
  EXPECT_THROW(c.set("stage1.epochs", "ten"), ConfigError);
  EXPECT_THROW(c.set("stage1.epochs", "-3"), ConfigError);
  EXPECT_THROW(c.set("lambda_sparse", "0.01x"), ConfigError);
}

TEST(Config, TextReproducesConfig) {
  TrainConfig c;
  c.stage2.lr = 3.3e-4;
  c.insertion = "all";
  c.experts = parse_experts("PI,TG");
  c.weights.lambda_sparse = 0.08;
  auto dir = fs::temp_directory_path() / "ssam_config";
  fs::create_directories(dir);
  std::ofstream(dir / "c.txt") << c.text();
  auto back = load_config(dir / "c.txt");
  EXPECT_EQ(back.text(), c.text());
  EXPECT_EQ(back.hash(), c.hash());
  c.seed = 9;
  EXPECT_NE(back.hash(), c.hash());
}

TEST(Config, FileCommentsAndLineNumbers) {
  auto dir = fs::temp_directory_path() / "ssam_config";
  fs::create_directories(dir);
  std::ofstream(dir / "ok.txt") << "# schedule\nstage1.epochs = 7   # short\n\nexperts = HP\n";
  auto c = load_config(dir / "ok.txt");
  EXPECT_EQ(c.stage1.epochs, 7u);
  ASSERT_EQ(c.experts.size(), 1u);
  EXPECT_EQ(c.experts[0], moe::ExpertKind::Hplsm);
  c.set("stage1.epochs", "9");
  EXPECT_EQ(c.stage1.epochs, 9u);
  std::ofstream(dir / "bad.txt") << "seed = 1\nnot a pair\n";
  try {
    load_config(dir / "bad.txt");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
}

TEST(Config, InsertionPresetsForFourLayers) {
  using V = std::vector<std::size_t>;
  EXPECT_EQ(parse_insertion("none", 4), V{});
  EXPECT_EQ(parse_insertion("first_half", 4), (V{1, 2}));
  EXPECT_EQ(parse_insertion("last_half", 4), (V{3, 4}));
  EXPECT_EQ(parse_insertion("all", 4), (V{1, 2, 3, 4}));
  EXPECT_EQ(parse_insertion("last_2", 4), (V{3, 4}));
  EXPECT_EQ(parse_insertion("last_2", 12), (V{11, 12}));
  EXPECT_EQ(parse_insertion("4, 2", 4), (V{2, 4}));
  EXPECT_THROW(parse_insertion("0", 4), ConfigError);
  EXPECT_THROW(parse_insertion("5", 4), ConfigError);
  EXPECT_THROW(parse_insertion("2,2", 4), ConfigError);
  EXPECT_THROW(parse_insertion("middle", 4), ConfigError);
}

TEST(Config, ExpertLists) {
  auto k = parse_experts("spd, PI");
  ASSERT_EQ(k.size(), 2u);
  EXPECT_EQ(k[0], moe::ExpertKind::Spd);
  EXPECT_EQ(experts_text(k), "spd,pimdo");
  EXPECT_THROW(parse_experts(""), ContractError);
  EXPECT_THROW(parse_experts("PI,pimdo"), ConfigError);
  TrainConfig c;
  c.experts.clear();
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Checkpoint, LayoutBytes) {
  Checkpoint c;
  c.put("ab", {2}, {1.0f, -2.0f});
  const std::string bytes = serialize(c);
  const std::string expected = std::string("SSAM1") + std::string("\x01\x00\x00\x00", 4) +
                               std::string("\x02\x00\x00\x00", 4) + "ab" + std::string("\x01\x00\x00\x00", 4) +
                               std::string("\x02\x00\x00\x00", 4) + std::string("\x02\x00\x00\x00", 4) +
                               std::string("\x00\x00\x80\x3f", 4) + std::string("\x00\x00\x00\xc0", 4);
  EXPECT_EQ(bytes, expected);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  Checkpoint c;
  c.put("w", {2, 3}, {0.1f, -0.2f, 3e-8f, 1e30f, -0.0f, 7.0f});
  c.put("s", {}, {42.0f});
  c.put_u64("meta.hash", {0xffffffffffffffffULL, 0, 123456789012345ULL});
  auto dir = fs::temp_directory_path() / "ssam_ckpt";
  save_checkpoint(c, dir / "a.ckpt");
  auto back = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(back, dir / "b.ckpt");
  EXPECT_EQ(serialize(back), serialize(c));
  std::ifstream a(dir / "a.ckpt", std::ios::binary), b(dir / "b.ckpt", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_EQ(sa, sb);
  EXPECT_EQ(back.get_u64("meta.hash"), (std::vector<std::uint64_t>{0xffffffffffffffffULL, 0, 123456789012345ULL}));
}

TEST(Checkpoint, CorruptInputs) {
  Checkpoint c;
  c.put("w", {3}, {1, 2, 3});
  const std::string bytes = serialize(c);
  EXPECT_THROW(deserialize("SSAM2" + bytes.substr(5)), FormatError);
  EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(deserialize(bytes + "x"), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST(Checkpoint, LoadParamsChecksNamesAndShapes) {
  Checkpoint c;
  c.put("a", {2}, {5, 6});
  ParamList<float> ok{{"a", Tensor<float>({2})}};
  c.load_params(ok);
  EXPECT_EQ(ok[0].tensor[1], 6.0f);
  ParamList<float> wrong_shape{{"a", Tensor<float>({3})}};
  EXPECT_THROW(c.load_params(wrong_shape), FormatError);
  ParamList<float> missing{{"b", Tensor<float>({2})}};
  EXPECT_THROW(c.load_params(missing), FormatError);
}
