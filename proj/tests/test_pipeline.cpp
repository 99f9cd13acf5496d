#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "ssam/experiments.hpp"
#include "ssam/train.hpp"

using namespace ssam;
using namespace ssam::pipeline;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Pipeline : public ::testing::Test {
 protected:
  static inline fs::path root;
  static inline data::Manifest manifest;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "ssam_pipeline";
    fs::remove_all(root);
    std::vector<std::string> ids;
    for (const auto& s : data::generate_dataset(12, 21)) {
      data::save_sample(s, root);
      ids.push_back(s.id);
    }
    manifest = data::make_splits(ids, 0.5, 4, 0.25);
    manifest.root = root;
    data::write_manifest(manifest, root / "manifest.tsv");
  }

  static TrainConfig tiny() {
    TrainConfig c;
    c.stage1.epochs = 2;
    c.stage1.batch = 2;
    c.stage2.epochs = 2;
    c.stage2.batch = 4;
    c.seed = 3;
    return c;
  }
};

}  // namespace

TEST(Optimizer, SingleAdamWStepMatchesHandComputation) {
  Tensor<float> w({1}, std::vector<float>{1.0f});
  w.set_requires_grad(true);
  w.mutable_grad()[0] = 0.5f;
  ParamList<float> params{{"w", w}};
  AdamW opt;
  opt.cfg.weight_decay = 0.01;
  opt.update(params, 0.1);
  // m_hat = 0.5, v_hat = 0.25, step = 0.5 / (0.5 + 1e-8), decay 0.01 * 1.
  const double expected = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01);
  EXPECT_NEAR(w[0], expected, 1e-7);
  EXPECT_NEAR(opt.m[0][0], 0.05, 1e-8);
  EXPECT_NEAR(opt.v[0][0], 0.00025, 1e-9);
}

TEST(Optimizer, CosineEndsAtZero) {
  EXPECT_DOUBLE_EQ(cosine_lr(1e-3, 0, 100), 1e-3);
  EXPECT_NEAR(cosine_lr(1e-3, 50, 100), 5e-4, 1e-15);
  EXPECT_NEAR(cosine_lr(1e-3, 100, 100), 0.0, 1e-18);
  for (std::size_t s = 1; s <= 100; ++s) EXPECT_LE(cosine_lr(1e-3, s, 100), cosine_lr(1e-3, s - 1, 100));
}

TEST_F(Pipeline, SplitSizes) {
  EXPECT_EQ(manifest.count(data::Provenance::Val), 3u);
  EXPECT_EQ(manifest.count(data::Provenance::Labeled), 5u);
  EXPECT_EQ(manifest.count(data::Provenance::Unlabeled), 4u);
}

TEST_F(Pipeline, TeacherKeepsEncoderFrozenAndIsDeterministic) {
  const auto cfg = tiny();
  auto a = train_teacher(cfg, manifest);
  auto b = train_teacher(cfg, manifest);
  EXPECT_EQ(a.encoder_checksum_before, a.encoder_checksum_after);
  EXPECT_EQ(a.encoder_checksum_before, backbone::init_frozen_backbone<float>(cfg.backbone_seed).checksum());
  EXPECT_EQ(a.final_loss, b.final_loss);
  EXPECT_EQ(serialize(a.checkpoint), serialize(b.checkpoint));
  ParamList<float> enc;
  a.model.encoder.collect(enc);
  for (const auto& p : enc) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
  ASSERT_TRUE(a.val.has_value());
  ASSERT_EQ(a.log.rows.size(), 2u);
}

TEST_F(Pipeline, TeacherTrainsOnlyLabeledIds) {
  auto run = train_teacher(tiny(), manifest);
  const auto ids = run.checkpoint.get_u64("meta.train_ids");
  std::set<std::uint64_t> expected;
  for (const auto& e : manifest.with(data::Provenance::Labeled)) expected.insert(id_hash(e.id));
  EXPECT_EQ(std::set<std::uint64_t>(ids.begin(), ids.end()), expected);
}

TEST_F(Pipeline, RunLogIsAdditive) {
  auto run = train_teacher(tiny(), manifest);
  for (const auto& r : run.log.rows) EXPECT_NEAR(r.total, r.bce + r.dice + r.sparse + r.topo, 1e-6);
  auto lines = run.log.csv();
  EXPECT_EQ(lines.substr(0, lines.find('\n')), RunLog::header());
}

TEST_F(Pipeline, TeacherCheckpointRoundTrip) {
  auto run = train_teacher(tiny(), manifest);
  auto dir = root / "ckpt";
  save_checkpoint(run.checkpoint, dir / "t.ckpt");
  auto loaded = load_checkpoint(dir / "t.ckpt");
  save_checkpoint(loaded, dir / "t2.ckpt");
  EXPECT_EQ(slurp(dir / "t.ckpt"), slurp(dir / "t2.ckpt"));
  EXPECT_TRUE(loaded.has("adam.m.decoder.head_w"));
  EXPECT_TRUE(loaded.has("meta.rng"));
  auto t = load_teacher(loaded);
  auto batch = data::load_entries(manifest, manifest.with(data::Provenance::Val), data::MaskSource::None);
  NoGrad<float> ng;
  auto y0 = teacher_logits(run.model, batch.images);
  auto y1 = teacher_logits(t, batch.images);
  EXPECT_TRUE(std::equal(y0.data().begin(), y0.data().end(), y1.data().begin()));
}

TEST_F(Pipeline, EmptyLabeledSetIsContractError) {
  data::Manifest m = manifest;
  for (auto& e : m.entries)
    if (e.provenance == data::Provenance::Labeled) e.provenance = data::Provenance::Unlabeled;
  EXPECT_THROW(train_teacher(tiny(), m), ContractError);
}

TEST_F(Pipeline, PseudoLabelsCoverAllTrainingIdsAndRepeat) {
  auto run = train_teacher(tiny(), manifest);
  auto pm = generate_pseudo_labels(run.model, manifest, root / "pseudo_a");
  EXPECT_EQ(pm.entries.size(), 9u);
  for (const auto& e : pm.entries) {
    EXPECT_EQ(e.provenance, data::Provenance::Pseudo);
    EXPECT_FALSE(data::is_ground_truth_path(e.mask));
    EXPECT_TRUE(fs::exists(pm.resolve(e.mask)));
  }
  auto again = generate_pseudo_labels(run.model, manifest, root / "pseudo_b");
  for (const auto& e : pm.entries) EXPECT_EQ(slurp(root / "pseudo_a" / (e.id + ".pgm")), slurp(root / "pseudo_b" / (e.id + ".pgm")));
}

TEST_F(Pipeline, PseudoMaskFileEqualsThresholdedTeacherOutput) {
  auto run = train_teacher(tiny(), manifest);
  auto pm = generate_pseudo_labels(run.model, manifest, root / "pseudo_c");
  const auto& e = pm.entries.front();
  auto img = data::read_image(manifest.resolve(e.image));
  Tensor<float> x({1, 1, 64, 64}, img);
  NoGrad<float> ng;
  auto z = teacher_logits(run.model, x);
  std::vector<std::uint8_t> mask(64 * 64);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = 1.0 / (1.0 + std::exp(-double(z[i]))) > 0.5 ? 1 : 0;
  data::write_mask(root / "expected.pgm", 64, 64, mask);
  EXPECT_EQ(slurp(pm.resolve(e.mask)), slurp(root / "expected.pgm"));
}

TEST_F(Pipeline, StudentOnPseudoLabels) {
  auto teacher = train_teacher(tiny(), manifest);
  auto pm = generate_pseudo_labels(teacher.model, manifest, root / "pseudo_d");
  auto a = train_student(tiny(), pm, StudentSource::Pseudo, &manifest);
  auto b = train_student(tiny(), pm, StudentSource::Pseudo, &manifest);
  EXPECT_EQ(serialize(a.checkpoint), serialize(b.checkpoint));
  ASSERT_TRUE(a.val.has_value());
  EXPECT_EQ(a.checkpoint.get_u64("meta.train_ids").size(), 9u);
}

TEST_F(Pipeline, PseudoModeRejectsOtherProvenance) {
  EXPECT_THROW(train_student(tiny(), manifest, StudentSource::Pseudo), ContractError);
  data::Manifest leak;
  leak.root = root;
  leak.entries.push_back({"x", "images/x.pgm", "masks/x.pgm", data::Provenance::Pseudo});
  EXPECT_THROW(train_student(tiny(), leak, StudentSource::Pseudo), ContractError);
}

TEST_F(Pipeline, EvaluateRejectsTrainingIds) {
  auto run = train_student(tiny(), manifest, StudentSource::GroundTruth, &manifest);
  EXPECT_THROW(evaluate_model(run.checkpoint, manifest, data::Provenance::Labeled), ContractError);
  auto report = evaluate_model(run.checkpoint, manifest, data::Provenance::Val);
  EXPECT_EQ(report.total_px, 3u * 64 * 64);
}

TEST_F(Pipeline, EmptyPredictionHasZeroPd) {
  Rng rng(1);
  auto s = backbone::StudentModel<float>::init(rng);
  for (float& v : s.head_w.mutable_data()) v = 0;
  s.head_b.mutable_data()[0] = -20;
  auto c = student_checkpoint(s, tiny(), 0, nullptr, {});
  auto r = evaluate_model(c, manifest, data::Provenance::Val);
  EXPECT_EQ(r.Pd, 0.0);
  EXPECT_EQ(r.mIoU, 0.0);
  EXPECT_EQ(r.Fa, 0.0);
}

TEST_F(Pipeline, EvaluationMatchesWholeTensorRecount) {
  auto run = train_teacher(tiny(), manifest);
  auto val = data::load_entries(manifest, manifest.with(data::Provenance::Val), data::MaskSource::GroundTruth);
  auto fn = [&](const Tensor<float>& x) { return teacher_logits(run.model, x); };
  auto batched = evaluate_logits(fn, val, 0.5, 2);
  Tensor<float> prob;
  {
    NoGrad<float> ng;
    prob = ops::sigmoid(fn(val.images));
  }
  auto whole = metrics::segmentation_metrics(prob, val.masks, 0.5);
  EXPECT_EQ(batched.tp_px, whole.tp_px);
  EXPECT_EQ(batched.fp_px, whole.fp_px);
  EXPECT_EQ(batched.detected_targets, whole.detected_targets);
  EXPECT_DOUBLE_EQ(batched.mIoU, whole.mIoU);
  EXPECT_DOUBLE_EQ(batched.nIoU, whole.nIoU);
}

TEST_F(Pipeline, NoInsertionIsPlainEncoderAndDecoder) {
  auto cfg = tiny();
  cfg.insertion = "none";
  auto t = make_teacher(cfg);
  for (const auto& p : t.trainable()) EXPECT_EQ(p.name.rfind("decoder.", 0), 0u) << p.name;
  auto batch = data::load_entries(manifest, manifest.with(data::Provenance::Val), data::MaskSource::None);
  NoGrad<float> ng;
  auto direct = backbone::decode_mask(backbone::encoder_forward(t.encoder, batch.images).grid, t.decoder);
  auto ours = teacher_logits(t, batch.images);
  EXPECT_TRUE(std::equal(direct.data().begin(), direct.data().end(), ours.data().begin()));
}

TEST_F(Pipeline, CachedPrefixMatchesFullForward) {
  auto t = make_teacher(tiny());
  auto batch = data::load_entries(manifest, manifest.with(data::Provenance::Val), data::MaskSource::None);
  NoGrad<float> ng;
  auto full = backbone::decode_mask(backbone::encoder_forward(t.encoder, batch.images, &t.adapter).grid, t.decoder);
  auto cached = teacher_logits(t, batch.images);
  EXPECT_TRUE(std::equal(full.data().begin(), full.data().end(), cached.data().begin()));
}

TEST_F(Pipeline, SingleExpertRoutesWithUnitWeight) {
  auto cfg = tiny();
  cfg.experts = parse_experts("PI");
  auto t = make_teacher(cfg);
  auto batch = data::load_entries(manifest, manifest.with(data::Provenance::Val), data::MaskSource::None);
  std::vector<moe::RoutingRecord<float>> records;
  NoGrad<float> ng;
  teacher_head(t, teacher_prefix(t, batch.images), &records);
  ASSERT_EQ(records.size(), 2u);
  for (const auto& r : records)
    for (float w : r.weights.data()) EXPECT_EQ(w, 1.0f);
}

TEST_F(Pipeline, LambdaGridGivesThreeRows) {
  auto cfg = tiny();
  cfg.stage1.epochs = 1;
  const auto axis = AblationAxis::LambdaSparse;
  auto rows = run_ablation(axis, default_settings(axis), {0}, cfg, manifest);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].setting, "0.01");
  EXPECT_THROW(run_ablation(AblationAxis::Experts, {""}, {0}, cfg, manifest), ContractError);
  EXPECT_THROW(apply_setting(AblationAxis::Insertion, "middle", cfg), ConfigError);
}

TEST_F(Pipeline, LossFallsOverTwentyEpochs) {
  // Median over three seeds of epoch-20 loss against epoch-1 loss.
  std::vector<double> ratio;
  for (std::uint64_t seed : {0, 1, 2}) {
    auto cfg = tiny();
    cfg.seed = seed;
    cfg.stage1.epochs = 20;
    cfg.stage1.batch = 5;
    auto run = train_teacher(cfg, manifest);
    ratio.push_back(run.log.rows.back().total / run.log.rows.front().total);
  }
  std::sort(ratio.begin(), ratio.end());
  EXPECT_LT(ratio[1], 1.0);
}

TEST(Gradcheck, ReportFormatAndNegativeControl) {
  auto lines = run_gradcheck(GradcheckScope::Losses, {{1, 2}, false});
  ASSERT_EQ(lines.size(), 4u);
  for (const auto& l : lines) EXPECT_TRUE(l.pass) << l.name;
  const auto text = format_gradcheck(lines);
  EXPECT_NE(text.find("dice "), std::string::npos);
  EXPECT_NE(text.find(" pass\n"), std::string::npos);
  auto bad = run_gradcheck(GradcheckScope::Losses, {{1, 2}, true});
  for (const auto& l : bad) EXPECT_EQ(l.pass, l.name != "dice") << l.name;
  EXPECT_NE(format_gradcheck(bad).find("dice 9."), std::string::npos);
  EXPECT_THROW(parse_scope("everything"), ConfigError);
}
