#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <map>

#include "kuda/pipeline.hpp"

using namespace kuda;

namespace {

struct Fixture {
  Dataset ds;
  TrainConfig tc;
  StageResult stage1;
  std::unique_ptr<KudaModel> model;
  StageResult stage2;
};

TrainConfig tiny_config() {
  TrainConfig tc = TrainConfig::desk();
  tc.pretrain_epochs = 4;
  tc.epochs = 4;
  tc.d_f = 16;
  tc.seed = 5;
  return tc;
}

Fixture& trained() {
  static Fixture f = [] {
    Fixture x;
    GeneratorConfig g;
    g.samples = 160;
    x.ds = synthesize(g, 5);
    x.tc = tiny_config();
    KudaModel s1(model_config(x.tc, data_shape(x.ds)), x.tc.seed);
    x.stage1 = pretrain_stage(s1, x.ds, x.tc);
    x.model = std::make_unique<KudaModel>(model_config(x.tc, data_shape(x.ds)), x.tc.seed);
    x.stage2 = downstream_stage(*x.model, x.ds, &x.stage1.checkpoint, x.tc);
    return x;
  }();
  return f;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(Minibatches, CoverEveryRecordOnceAndFoldSingletons) {
  GeneratorConfig g;
  g.samples = 33;
  const Dataset d = synthesize(g, 1);
  std::vector<const SampleRecord*> all;
  for (const auto& r : d.records) all.push_back(&r);
  Rng rng = make_rng(1, "test");
  const auto groups = minibatches(all, 16, &rng);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].size(), 16u);
  EXPECT_EQ(groups[1].size(), 17u);
  std::vector<const SampleRecord*> seen;
  for (const auto& gr : groups) seen.insert(seen.end(), gr.begin(), gr.end());
  std::sort(seen.begin(), seen.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(seen, all);
}

TEST(MakeBatch, ShapesFollowRecords) {
  GeneratorConfig g;
  g.samples = 4;
  const Dataset d = synthesize(g, 1);
  std::vector<const SampleRecord*> rs{&d.records[0], &d.records[1], &d.records[2]};
  const MultimodalBatch b = make_batch(rs);
  EXPECT_EQ(b.size(), 3u);
  EXPECT_EQ(b.inputs[0].ids.size(), 3 * g.lengths[0]);
  EXPECT_EQ(b.inputs[1].features.shape(), (Shape{3, g.lengths[1], g.vision_dim}));
  EXPECT_EQ(b.inputs[2].features.shape(), (Shape{3, g.lengths[2], g.audio_dim}));
  EXPECT_EQ(b.ids[1], d.records[1].id);
}

TEST(DataShape, RejectsRaggedRecords) {
  GeneratorConfig g;
  g.samples = 4;
  Dataset d = synthesize(g, 1);
  d.records[2].text.push_back(0);
  EXPECT_THROW(data_shape(d), DataError);
  d = synthesize(g, 1);
  d.records[3].text[0] = static_cast<int>(d.vocab_size);
  EXPECT_THROW(data_shape(d), DataError);
}

TEST(TrainConfig, ProfilesAndValidation) {
  for (const char* name : {"ch-sims", "ch-simsv2", "mosi", "mosei"}) EXPECT_NO_THROW(TrainConfig::paper(name).validate());
  EXPECT_EQ(TrainConfig::paper("mosei").n_blocks, 4u);
  EXPECT_EQ(TrainConfig::paper("mosi").label_range.hi, 3.0);
  EXPECT_THROW(TrainConfig::paper("iemocap"), std::invalid_argument);
  TrainConfig t = TrainConfig::desk();
  t.k = 0.0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = TrainConfig::desk();
  t.batch_size = 1;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  for (Ablation a : kAblations) EXPECT_EQ(ablation_from_name(name_of(a)), a);
  EXPECT_THROW(ablation_from_name("no_everything"), std::invalid_argument);
}

TEST(ModelConfig, AblationsShapeTheArchitecture) {
  DataShape s{50, {8, 8, 8}, 16, 24};
  TrainConfig t = TrainConfig::desk();
  EXPECT_TRUE(model_config(t, s).use_adapters);
  t.ablations = {Ablation::no_Adapter};
  EXPECT_FALSE(model_config(t, s).use_adapters);
  EXPECT_TRUE(model_config(t, s).use_decoders);
  t.ablations = {Ablation::no_EKI};
  EXPECT_FALSE(model_config(t, s).use_decoders);
  t.ablations = {Ablation::no_DAF};
  EXPECT_EQ(model_config(t, s).strategy, FusionStrategy::addition);
}

TEST(Pretrain, TrainLossFallsAndBestEpochIsArgmin) {
  const auto& r = trained().stage1;
  ASSERT_EQ(r.train_loss.size(), 4u);
  EXPECT_LT(r.train_loss.back(), r.train_loss.front());
  const auto best = std::min_element(r.valid_mae.begin(), r.valid_mae.end());
  EXPECT_EQ(r.best_epoch, static_cast<std::size_t>(best - r.valid_mae.begin()) + 1);
  EXPECT_EQ(r.best_valid_mae, *best);
}

TEST(Downstream, KnowledgeParametersStayFrozen) {
  const Fixture& f = trained();
  std::map<std::string, const Tensor*> snap;
  for (const auto& p : f.stage1.checkpoint) snap[p.name] = &p.tensor;
  const ParamList frozen = f.model->knowledge_parameters();
  ASSERT_FALSE(frozen.empty());
  for (const auto& p : frozen) {
    ASSERT_TRUE(snap.count(p.name)) << p.name;
    EXPECT_TRUE(bit_equal(*snap[p.name], p.tensor)) << p.name;
  }
  // Encoders are loaded from stage 1 but keep training.
  std::size_t moved = 0;
  for (const auto& p : f.model->encoder_parameters()) moved += !bit_equal(*snap.at(p.name), p.tensor);
  EXPECT_GT(moved, 0u);
}

TEST(Downstream, RestoresBestValidationEpoch) {
  const Fixture& f = trained();
  const auto& r = f.stage2;
  const auto best = std::min_element(r.valid_mae.begin(), r.valid_mae.end());
  EXPECT_EQ(r.best_epoch, static_cast<std::size_t>(best - r.valid_mae.begin()) + 1);
  EXPECT_DOUBLE_EQ(split_mae(*f.model, f.ds.split(Split::valid), f.tc.batch_size), r.best_valid_mae);
}

TEST(Downstream, NoKipIgnoresCheckpoint) {
  const Fixture& f = trained();
  TrainConfig t = f.tc;
  t.epochs = 1;
  t.ablations = {Ablation::no_KIP};
  KudaModel m(model_config(t, data_shape(f.ds)), t.seed);
  const ParamList before = clone_values(m.knowledge_parameters());
  downstream_stage(m, f.ds, &f.stage1.checkpoint, t);
  std::size_t moved = 0;
  const ParamList after = m.knowledge_parameters();
  for (std::size_t i = 0; i < after.size(); ++i) moved += !bit_equal(before[i].tensor, after[i].tensor);
  EXPECT_GT(moved, 0u);
}

TEST(Evaluate, PredictionsIgnoreLabels) {
  const Fixture& f = trained();
  EvalOutput a, b;
  const MetricReport ma = evaluate(*f.model, f.ds, Split::test, {}, &a);
  Dataset altered = f.ds;
  for (auto& r : altered.records) {
    r.label = -r.label;
    r.unimodal.reset();
  }
  const MetricReport mb = evaluate(*f.model, altered, Split::test, {}, &b);
  EXPECT_EQ(a.predictions, b.predictions);
  EXPECT_EQ(a.unimodal, b.unimodal);
  EXPECT_NE(ma.mae, mb.mae);
}

TEST(Evaluate, BatchSizeDoesNotChangePredictions) {
  const Fixture& f = trained();
  EvalOutput a, b;
  evaluate(*f.model, f.ds, Split::test, {4}, &a);
  evaluate(*f.model, f.ds, Split::test, {64}, &b);
  ASSERT_EQ(a.predictions.size(), b.predictions.size());
  for (std::size_t i = 0; i < a.predictions.size(); ++i) EXPECT_NEAR(a.predictions[i], b.predictions[i], 1e-12);
}

TEST(Evaluate, AttentionMassIsADistribution) {
  const Fixture& f = trained();
  EvalOutput out;
  evaluate(*f.model, f.ds, Split::test, {16, true, true}, &out);
  ASSERT_EQ(out.attention_mass.size(), out.predictions.size());
  for (const auto& m : out.attention_mass) {
    EXPECT_NEAR(m[0] + m[1] + m[2], 1.0, 1e-12);
    for (double v : m) EXPECT_GE(v, 0.0);
  }
  EXPECT_EQ(out.attention.size(), out.predictions.size() * f.tc.n_blocks * 3);
  EXPECT_EQ(out.features.size(), out.predictions.size());
}

TEST(Training, DeterministicForFixedSeed) {
  GeneratorConfig g;
  g.samples = 60;
  const Dataset d = synthesize(g, 9);
  TrainConfig t = tiny_config();
  t.pretrain_epochs = 1;
  t.epochs = 1;
  auto run = [&] {
    KudaModel s1(model_config(t, data_shape(d)), t.seed);
    const auto ck = pretrain_stage(s1, d, t).checkpoint;
    KudaModel m(model_config(t, data_shape(d)), t.seed);
    downstream_stage(m, d, &ck, t);
    return predict_values(m, d.split(Split::test), 16);
  };
  EXPECT_EQ(run(), run());
}

TEST(Pretrain, RequiresUnimodalLabels) {
  GeneratorConfig g;
  g.samples = 30;
  Dataset d = synthesize(g, 2);
  d.records[4].unimodal.reset();
  TrainConfig t = tiny_config();
  KudaModel m(model_config(t, data_shape(d)), t.seed);
  EXPECT_THROW(pretrain_stage(m, d, t), DataError);
}
