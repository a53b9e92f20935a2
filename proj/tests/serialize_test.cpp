#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "kuda/model.hpp"
#include "kuda/serialize.hpp"

using namespace kuda;

namespace {
ParamList sample_params() {
  return {{"a.weight", Tensor::from({2, 3}, {1, -2, 3.5, 1e-300, -0.0, 7})},
          {"b", Tensor::from({1}, {0.125})},
          {"c.cube", Tensor::from({2, 1, 2}, {1, 2, 3, 4})}};
}

bool same_bits(const ParamList& a, const ParamList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].tensor.shape() != b[i].tensor.shape()) return false;
    if (std::memcmp(a[i].tensor.data().data(), b[i].tensor.data().data(), a[i].tensor.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}
}  // namespace

TEST(Snapshot, EncodeDecodeIsBitExact) {
  const ParamList p = sample_params();
  const std::string bytes = encode_snapshot(p);
  EXPECT_EQ(bytes.substr(0, 4), "KUDA");
  EXPECT_TRUE(same_bits(decode_snapshot(bytes), p));
  EXPECT_EQ(encode_snapshot(decode_snapshot(bytes)), bytes);
}

TEST(Snapshot, RejectsCorruptInput) {
  std::string bytes = encode_snapshot(sample_params());
  EXPECT_THROW(decode_snapshot(bytes.substr(0, bytes.size() - 3)), SnapshotError);
  EXPECT_THROW(decode_snapshot(bytes.substr(0, 3)), SnapshotError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_snapshot(bad), SnapshotError);
  bad = bytes;
  bad[4] = 9;
  EXPECT_THROW(decode_snapshot(bad), SnapshotError);
}

TEST(Snapshot, AssignChecksNamesAndShapes) {
  ParamList target{{"b", Tensor::zeros({1}, true)}, {"a.weight", Tensor::zeros({2, 3}, true)}};
  assign_parameters(target, sample_params());
  EXPECT_EQ(target[0].tensor.item(), 0.125);
  EXPECT_EQ(target[1].tensor.data()[2], 3.5);
  ParamList missing{{"zzz", Tensor::zeros({1})}};
  EXPECT_THROW(assign_parameters(missing, sample_params()), SnapshotError);
  ParamList wrong{{"a.weight", Tensor::zeros({3, 2})}};
  EXPECT_THROW(assign_parameters(wrong, sample_params()), SnapshotError);
}

TEST(Snapshot, ModelRoundTripThroughFile) {
  const ModelConfig cfg = ModelConfig::desk(40);
  KudaModel a(cfg, 1), b(cfg, 2);
  const auto path = std::filesystem::temp_directory_path() / "kuda_serialize_test.kuda";
  save_snapshot(path.string(), a.parameters());
  assign_parameters(b.parameters(), load_snapshot(path.string()));
  EXPECT_TRUE(same_bits(clone_values(a.parameters()), clone_values(b.parameters())));
  std::filesystem::remove(path);
  EXPECT_THROW(load_snapshot(path.string()), SnapshotError);
}
