#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "mtlam/corpus.hpp"
#include "mtlam/diagnostics.hpp"
#include "support.hpp"

using namespace mtlam;

namespace {

Matrix two_blobs(Eigen::Index per_blob, Eigen::Index dim, double gap, std::uint64_t seed, std::vector<int>& tag) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix x(2 * per_blob, dim);
  tag.clear();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int c = i < per_blob ? 0 : 1;
    tag.push_back(c);
    for (Eigen::Index k = 0; k < dim; ++k) x(i, k) = g(rng) + (c && k == 0 ? gap : 0.0);
  }
  return x;
}

std::vector<Record> corpus(std::size_t n) {
  SynthConfig sc;
  sc.n_per_type = n;
  sc.seed = 2;
  return split(synthesize(sc), {0.8, 0.1, 0.1}, 2);
}

Model tiny_model() {
  EncoderConfig e;
  e.embedding_dim = 16;
  e.vocabulary_hash_buckets = 256;
  HeadConfig h;
  h.hidden_width = 6;
  return make_model(e, h, 1);
}

}  // namespace

TEST(Silhouette, SeparatedClustersScoreHigh) {
  std::vector<int> tag;
  const Matrix x = two_blobs(40, 2, 20.0, 1, tag);
  EXPECT_GT(silhouette(x, tag), 0.8);
  const Matrix y = two_blobs(40, 2, 0.0, 2, tag);
  EXPECT_LT(silhouette(y, tag), 0.2);
}

TEST(Tsne, SeparatesBlobsAndIsSeeded) {
  std::vector<int> tag;
  const Matrix x = two_blobs(60, 128, 12.0, 3, tag);
  TsneConfig cfg;
  cfg.perplexity = 15;
  cfg.iterations = 400;
  cfg.seed = 4;
  const Matrix y = tsne_project(x, cfg);
  EXPECT_EQ(y.rows(), 120);
  EXPECT_EQ(y.cols(), 2);
  EXPECT_TRUE(y.allFinite());
  EXPECT_GT(silhouette(y, tag), 0.5);
  EXPECT_EQ(tsne_project(x, cfg), y);
  cfg.perplexity = 50;
  EXPECT_THROW(tsne_project(x, cfg), DataError);
}

TEST(Extract, LayersHaveExpectedShapesAndTags) {
  const auto rs = corpus(40);
  const Model m = tiny_model();
  const auto enc = extract(m, rs, Layer::kEncoderOut, 60, 1);
  EXPECT_EQ(enc.matrix.rows(), 60);
  EXPECT_EQ(enc.matrix.cols(), 16);
  const auto shared = extract(m, rs, Layer::kShared, 60, 1);
  EXPECT_EQ(shared.matrix.cols(), 6);
  EXPECT_EQ(shared.task_tags, enc.task_tags);
  std::set<std::string> types(enc.task_tags.begin(), enc.task_tags.end());
  EXPECT_EQ(types, (std::set<std::string>{"IAC", "IBM_QUALITY", "PROPAGANDA"}));
  const auto task = extract(m, rs, Layer::kTaskSpecific, 60, 1);
  EXPECT_GE(task.matrix.rows(), 60);
  EXPECT_EQ(static_cast<std::size_t>(task.matrix.rows()), task.task_tags.size());
  EXPECT_THROW(parse_layer("HIDDEN"), ConfigError);
}

TEST(Extract, SampleIsStratifiedAndCapped) {
  const auto rs = corpus(100);
  const auto idx = stratified_sample(rs, 30, 5);
  EXPECT_EQ(idx.size(), 30u);
  std::array<int, 3> per{};
  for (auto i : idx) ++per[index_of(rs[i].task_type)];
  EXPECT_EQ(per, (std::array<int, 3>{10, 10, 10}));
  EXPECT_EQ(stratified_sample(rs, 1000, 5).size(), rs.size());
  EXPECT_EQ(stratified_sample(rs, 30, 5), idx);
}

TEST(Dump, RoundTrips) {
  RepresentationDump d;
  d.layer = Layer::kShared;
  d.matrix = Matrix::Random(4, 3);
  d.task_tags = {"IAC", "IAC", "PROPAGANDA", "IBM_QUALITY"};
  d.sample_seed = 77;
  std::stringstream s;
  write_dump(s, d);
  const auto back = read_dump(s);
  EXPECT_EQ(back.layer, d.layer);
  EXPECT_EQ(back.task_tags, d.task_tags);
  EXPECT_EQ(back.sample_seed, 77u);
  EXPECT_TRUE(back.matrix.isApprox(d.matrix, 1e-15));
}

TEST(Plot, OneLegendEntryPerTag) {
  const auto dir = fixtures::scratch_dir("plot");
  Matrix p(4, 2);
  p << 0, 0, 1, 1, 2, 0, 3, 1;
  const auto path = (dir / "p.svg").string();
  EXPECT_EQ(emit_plot(p, {"a", "b", "a", "c"}, path, "t"), 3u);
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  EXPECT_NE(buf.str().find("<svg"), std::string::npos);
  EXPECT_THROW(emit_plot(Matrix(0, 2), {}, path), std::invalid_argument);
  EXPECT_THROW(emit_plot(p, {"a", "b", "a", "c"}, "/nonexistent/dir/p.svg"), DataError);
}

TEST(Profile, RowsPerVariantAndFraction) {
  const auto rs = filter_split(corpus(100), Split::kTrain);
  ProfileConfig cfg;
  cfg.encoder.embedding_dim = 16;
  cfg.encoder.vocabulary_hash_buckets = 256;
  cfg.head.hidden_width = 6;
  cfg.train.batch_size = 16;
  cfg.repeats = 1;
  const auto rows = profile({"multi_task", "single_task", "bogus"}, rs, kProfileFractions, cfg);
  ASSERT_EQ(rows.size(), 12u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_FALSE(rows[i].error);
    EXPECT_GT(rows[i].wall_seconds, 0);
  }
  EXPECT_TRUE(rows[8].error);
  const std::vector<double> bad = {0.5};
  EXPECT_THROW(profile({"multi_task"}, rs, bad, cfg), ConfigError);
  std::stringstream out;
  write_profile(out, rows);
  EXPECT_NE(out.str().find("data_fraction"), std::string::npos);
}
