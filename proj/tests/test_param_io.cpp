#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "gesture_hrl/param_io.hpp"

using namespace ghrl;

namespace {

std::vector<QApproximator> sample_models(Rng& rng) {
  auto layout = std::make_shared<FeatureLayout>();
  layout->add("a", 3).add("b", 2);
  auto table = QApproximator::table(layout, 4, 2);
  for (Eigen::Index i = 0; i < table.table_values().size(); ++i) table.table_values().data()[i] = rng.uniform(-1, 1);
  table.set_update_count(17);
  auto net = QApproximator::network(7, {5, 4}, 6, rng, 3);
  net.set_update_count(99);
  return {table, net};
}

}  // namespace

TEST(ParamIo, RoundTripPreservesEverything) {
  Rng rng(10);
  const GridGeometry g(4, 3);
  const auto models = sample_models(rng);
  std::stringstream ss;
  write_parameters(ss, g, models);
  const ParameterFile pf = read_parameters(ss);
  EXPECT_EQ(pf.geometry, g);
  EXPECT_EQ(pf.checksum, goal_ordering_checksum(g));
  ASSERT_EQ(pf.approximators.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_TRUE(same_parameters(pf.approximators[i], models[i]));
    EXPECT_EQ(pf.approximators[i].head_width(), models[i].head_width());
    EXPECT_EQ(pf.approximators[i].update_count(), models[i].update_count());
  }
  EXPECT_EQ(*pf.approximators[0].layout(), *models[0].layout());

  // Same q-values on random inputs.
  auto layout = std::make_shared<FeatureLayout>();
  layout->add("x", 7, false);
  for (int k = 0; k < 100; ++k) {
    FeatureVector f(layout);
    for (auto& v : f.values) v = static_cast<float>(rng.uniform(-1, 1));
    EXPECT_EQ(pf.approximators[1].q_values(f), models[1].q_values(f));
  }
}

TEST(ParamIo, BytesAreDeterministic) {
  Rng a(3), b(3);
  std::stringstream s1, s2;
  write_parameters(s1, GridGeometry(2, 2), sample_models(a));
  write_parameters(s2, GridGeometry(2, 2), sample_models(b));
  EXPECT_EQ(s1.str(), s2.str());
  EXPECT_EQ(s1.str().substr(0, 8), "GHRLPRM1");
}

TEST(ParamIo, FileChecksumMismatchRejected) {
  Rng rng(1);
  const auto path = (std::filesystem::temp_directory_path() / "ghrl_param_io_test.bin").string();
  save_parameters(path, GridGeometry(4, 3), sample_models(rng));
  EXPECT_NO_THROW(load_parameters(path, GridGeometry(4, 3)));
  EXPECT_THROW(load_parameters(path, GridGeometry(9, 6)), checksum_error);
  EXPECT_THROW(load_parameters(path, GridGeometry(3, 4)), checksum_error);
  std::filesystem::remove(path);
  EXPECT_THROW(load_parameters(path, GridGeometry(4, 3)), std::runtime_error);
}

TEST(ParamIo, CorruptStreamsRejected) {
  Rng rng(1);
  std::stringstream ss;
  write_parameters(ss, GridGeometry(2, 2), sample_models(rng));
  const std::string bytes = ss.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_parameters(truncated), param_format_error);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream m(bad_magic);
  EXPECT_THROW(read_parameters(m), param_format_error);

  std::string bad_version = bytes;
  bad_version[8] = 7;
  std::stringstream v(bad_version);
  EXPECT_THROW(read_parameters(v), param_format_error);
}
