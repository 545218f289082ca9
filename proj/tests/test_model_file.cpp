#include <gtest/gtest.h>

#include <cstring>
#include <sstream>
#include <string>

#include "sessrnn/model_file.hpp"
#include "synthetic.hpp"

using namespace sessrnn;

namespace {

std::string bytes_of(const ModelFile& m) {
  std::ostringstream os(std::ios::binary);
  write_model(os, m);
  return os.str();
}

ModelFile from_bytes(const std::string& b) {
  std::istringstream is(b, std::ios::binary);
  return read_model(is);
}

Dataset small_data() { return ingest_events(synthetic::random_events(40, 12, 2, 6, 21)); }

NetworkParams small_gru(const Dataset& ds, TrainConfig& tc) {
  NetworkConfig nc;
  nc.layers = {5, 3};
  nc.use_bias = true;
  nc.deep_input = true;
  tc.batch_width = 6;
  tc.epochs = 1;
  tc.learning_rate = 0.05;
  tc.dropout = 0.1;
  return train_gru(ds.store, ds.vocab, nc, tc);
}

}  // namespace

TEST(ModelFile, GruRoundTripIsBitExact) {
  auto ds = small_data();
  TrainConfig tc;
  auto p = small_gru(ds, tc);
  const std::string b = bytes_of(gru_model_file(p, tc, ds.vocab));
  EXPECT_EQ(b.substr(0, 4), "SRE1");
  auto loaded = gru_from_model_file(from_bytes(b));
  auto a = p.named_params();
  auto c = loaded.params.named_params();
  ASSERT_EQ(a.size(), c.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, c[i].first);
    EXPECT_EQ(std::memcmp(a[i].second->values().data(), c[i].second->values().data(),
                          a[i].second->size() * sizeof(double)),
              0);
  }
  EXPECT_EQ(loaded.train.learning_rate, 0.05);
  EXPECT_EQ(loaded.train.dropout, 0.1);
  EXPECT_EQ(loaded.params.config.layers, (std::vector<std::size_t>{5, 3}));
  // Re-serializing the loaded model reproduces the bytes.
  EXPECT_EQ(bytes_of(gru_model_file(loaded.params, loaded.train, ds.vocab)), b);
}

TEST(ModelFile, LoadedGruScoresIdentically) {
  auto ds = small_data();
  TrainConfig tc;
  auto p = small_gru(ds, tc);
  LoadedModel lm(from_bytes(bytes_of(gru_model_file(p, tc, ds.vocab))));
  GruScorer direct(p);
  auto sc = lm.make_scorer();
  std::vector<double> x, y;
  for (ItemIndex i : {0u, 3u, 7u}) {
    direct.observe(i);
    sc->observe(i);
    direct.scores(x);
    sc->scores(y);
    EXPECT_EQ(x, y);
  }
}

TEST(ModelFile, BaselinesRoundTrip) {
  auto ds = small_data();
  auto knn = ItemKnnModel::train(ds.store, ds.vocab.size(), 20.0, 4);
  auto knn2 = itemknn_from_model_file(from_bytes(bytes_of(itemknn_model_file(knn, ds.vocab))));
  for (ItemIndex a = 0; a < ds.vocab.size(); ++a) EXPECT_EQ(knn.score(a), knn2.score(a));
  EXPECT_EQ(knn2.max_neighbors(), 4u);

  BprMfConfig cfg;
  cfg.factors = 4;
  cfg.epochs = 1;
  auto mf = BprMfModel::train(ds.store, ds.vocab.size(), cfg);
  EXPECT_EQ(bprmf_from_model_file(from_bytes(bytes_of(bprmf_model_file(mf, cfg, ds.vocab)))).factors(),
            mf.factors());

  for (auto kind : {ModelKind::pop, ModelKind::spop}) {
    auto f = from_bytes(bytes_of(popularity_model_file(kind, ds.vocab)));
    EXPECT_EQ(f.kind, kind);
    EXPECT_EQ(f.vocab, ds.vocab);
    LoadedModel lm(f);
    EXPECT_EQ(lm.make_scorer()->n_items(), ds.vocab.size());
  }
}

TEST(ModelFile, BadMagicRejected) {
  auto ds = small_data();
  std::string b = bytes_of(popularity_model_file(ModelKind::pop, ds.vocab));
  b[0] = 'X';
  EXPECT_THROW(from_bytes(b), ModelFormatError);
}

TEST(ModelFile, UnknownVersionRejected) {
  auto ds = small_data();
  std::string b = bytes_of(popularity_model_file(ModelKind::pop, ds.vocab));
  b[4] = 2;
  try {
    from_bytes(b);
    FAIL();
  } catch (const ModelFormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
}

TEST(ModelFile, TruncationDetectedAtEveryLength) {
  auto ds = small_data();
  auto knn = ItemKnnModel::train(ds.store, ds.vocab.size(), 20.0, 3);
  const std::string b = bytes_of(itemknn_model_file(knn, ds.vocab));
  for (std::size_t n = 0; n < b.size(); n += 7) EXPECT_THROW(from_bytes(b.substr(0, n)), ModelFormatError) << n;
}

TEST(ModelFile, WrongKindAndMissingPiecesRejected) {
  auto ds = small_data();
  auto f = popularity_model_file(ModelKind::pop, ds.vocab);
  EXPECT_THROW(gru_from_model_file(f), ModelFormatError);
  f.kind = ModelKind::bprmf;
  EXPECT_THROW(bprmf_from_model_file(f), ModelFormatError);
  f.kind = ModelKind::gru;
  EXPECT_THROW(LoadedModel{f}, ModelFormatError);
}

TEST(ModelFile, NumberFormatting) {
  for (double v : {0.1, 1e-6, 0.9, 1.0 / 3.0, -2.5, 0.0})
    EXPECT_EQ(parse_double(format_double(v)), v);
  EXPECT_EQ(split_sizes(join_sizes({100, 50, 7})), (std::vector<std::size_t>{100, 50, 7}));
  EXPECT_THROW(parse_uint("12x"), ModelFormatError);
}
