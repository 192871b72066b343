#include <filesystem>
#include <random>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "cml/config.hpp"
#include "cml/io.hpp"
#include "synthetic.hpp"

namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("cml_unit_" + name + "_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  return dir;
}

TEST(Embeddings, RoundTripIsByteIdentical) {
  const auto dir = scratch_dir("emb");
  const auto p = cml::init_embeddings(7, 11, 5, 3);
  cml::save_embeddings(dir / "a.cmle", p);
  const auto loaded = cml::load_embeddings(dir / "a.cmle");
  cml::save_embeddings(dir / "b.cmle", loaded);
  const auto a = cml::detail::read_file(dir / "a.cmle");
  EXPECT_EQ(a, cml::detail::read_file(dir / "b.cmle"));
  EXPECT_EQ(a.size(), 20u + 4u * 5u * (7u + 11u));
  EXPECT_EQ(a.substr(0, 4), "CMLE");
  for (std::size_t i = 0; i < p.user_raw.data.size(); ++i) {
    EXPECT_EQ(loaded.user_raw.data[i], static_cast<double>(static_cast<float>(p.user_raw.data[i])));
  }
  fs::remove_all(dir);
}

TEST(Embeddings, HeaderIsLittleEndian) {
  const auto bytes = cml::encode_embeddings(cml::init_embeddings(258, 1, 2, 0));
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);   // 258 = 0x0102
  EXPECT_EQ(static_cast<unsigned char>(bytes[9]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 2);
}

TEST(Embeddings, CorruptionIsRejected) {
  auto bytes = cml::encode_embeddings(cml::init_embeddings(2, 2, 2, 0));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(cml::decode_embeddings(bad_magic), cml::DataError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(cml::decode_embeddings(bad_version), cml::DataError);
  EXPECT_THROW(cml::decode_embeddings(bytes.substr(0, bytes.size() - 1)), cml::DataError);
  EXPECT_THROW(cml::decode_embeddings("CML"), cml::DataError);
}

TEST(Embeddings, ShapeMismatchNamesDimension) {
  const auto s = cml::make_interaction_set(3, 4, {{0, 0}});
  const auto p = cml::init_embeddings(3, 5, 2, 0);
  try {
    cml::check_embedding_shape(p, s);
    FAIL() << "expected DataError";
  } catch (const cml::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("M mismatch"), std::string::npos);
  }
  EXPECT_NO_THROW(cml::check_embedding_shape(cml::init_embeddings(3, 4, 2, 0), s, 2));
  EXPECT_THROW(cml::check_embedding_shape(cml::init_embeddings(3, 4, 2, 0), s, 3), cml::DataError);
}

TEST(ProcessedDirectory, RoundTrip) {
  const auto dir = scratch_dir("proc");
  const auto s = cml::testing::PlantedBlocks{}.generate();
  cml::write_processed(dir, s, "planted");
  const auto back = cml::read_processed(dir);
  EXPECT_EQ(back.pairs, s.pairs);
  EXPECT_EQ(back.user_keys, s.user_keys);
  EXPECT_EQ(back.item_keys, s.item_keys);
  EXPECT_EQ(back.item_freq, s.item_freq);
  EXPECT_EQ(cml::read_stat(dir, "dataset"), std::optional<std::string>("planted"));
  EXPECT_EQ(cml::read_stat(dir, "num_users"), std::optional<std::string>("200"));
  EXPECT_FALSE(cml::read_stat(dir, "missing"));

  const auto folds = cml::kfold_split(s, 4, 1);
  cml::write_folds(dir / "folds.tsv", folds);
  const auto fb = cml::read_folds(dir / "folds.tsv", s.pairs.size());
  EXPECT_EQ(fb.fold_of, folds.fold_of);
  EXPECT_EQ(fb.k, 4);
  EXPECT_THROW(cml::read_folds(dir / "folds.tsv", s.pairs.size() + 1), cml::DataError);
  fs::remove_all(dir);
}

TEST(MetricsTable, FormatParseAndUpsert) {
  cml::MetricsTable t(10);
  const cml::RunLabel label{"uniform", 1, 256};
  t.upsert(label, {0, 0.1, 0.2, 3.0, 5});
  t.upsert(label, {1, 0.3, 0.4, 5.0, 5});
  t.upsert(label, {0, 0.5, 0.6, 7.0, 5});  // replaces fold 0
  const auto text = t.format();
  EXPECT_NE(text.find("strategy\tn_negatives\tbatch_size\tfold\tmap_at_10\tndcg_at_10\tmmr\n"),
            std::string::npos);
  EXPECT_NE(text.find("uniform\t1\t256\t0\t0.500000\t0.600000\t7.000000\n"), std::string::npos);
  EXPECT_NE(text.find("uniform\t1\t256\tmean±std\t0.400000±0.141421"), std::string::npos);

  const auto dir = scratch_dir("metrics");
  cml::detail::write_file(dir / "m.tsv", text);
  const auto back = cml::MetricsTable::parse(dir / "m.tsv");
  EXPECT_EQ(back.k(), 10u);
  EXPECT_EQ(back.format(), text);
  fs::remove_all(dir);
}

cml::KeyValues kv_of(const std::string& text) {
  std::istringstream in(text);
  return cml::parse_key_values(in);
}

TEST(Config, ParseKeyValues) {
  const auto kv = kv_of("# comment\n\n dim = 32 \nstrategy=uniform\r\n");
  EXPECT_EQ(kv.at("dim"), "32");
  EXPECT_EQ(kv.at("strategy"), "uniform");
  EXPECT_THROW(kv_of("novalue\n"), cml::ParseError);
}

TEST(Config, FlagOverridesFileOverridesDefault) {
  const auto c = cml::resolve_config(kv_of("dim=32\nepochs=7\n"), {{"dim", "64"}});
  EXPECT_EQ(c.hyper.dim, 64u);
  EXPECT_EQ(c.hyper.epochs, 7u);
  EXPECT_EQ(c.hyper.batch_size, 256u);
  EXPECT_EQ(c.sampler.strategy, cml::Strategy::kTwoStage);
}

TEST(Config, ScheduledDefaults) {
  EXPECT_DOUBLE_EQ(cml::resolve_config({}, {{"n_negatives", "1"}}).hyper.lambda_g, 0.01);
  EXPECT_DOUBLE_EQ(cml::resolve_config({}, {{"n_negatives", "2"}}).hyper.lambda_g, 0.01);
  EXPECT_DOUBLE_EQ(cml::resolve_config({}, {{"n_negatives", "5"}}).hyper.lambda_g, 0.001);
  EXPECT_DOUBLE_EQ(cml::resolve_config({}, {{"n_negatives", "5"}, {"lambda_g", "0.5"}}).hyper.lambda_g, 0.5);
  EXPECT_DOUBLE_EQ(cml::resolve_config({}, {{"dataset", "book-crossing"}}).sampler.beta, 0.8);
  EXPECT_DOUBLE_EQ(cml::resolve_config({}, {{"dataset", "echonest"}}).sampler.beta, 1.0);
  EXPECT_DOUBLE_EQ(cml::resolve_config({}, {{"dataset", "book-crossing"}, {"beta", "0.3"}}).sampler.beta, 0.3);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(cml::resolve_config({}, {{"bogus", "1"}}), cml::ConfigError);
  EXPECT_THROW(cml::resolve_config({}, {{"dim", "abc"}}), cml::ConfigError);
  EXPECT_THROW(cml::resolve_config({}, {{"strategy", "hard"}}), cml::ConfigError);
  EXPECT_THROW(cml::resolve_config({}, {{"test_fold", "4"}}), cml::ConfigError);
  EXPECT_THROW(cml::resolve_config({}, {{"lr", "0"}}), cml::ConfigError);
}

TEST(Config, ResolvedValuesRoundTrip) {
  const auto c = cml::resolve_config(kv_of("strategy=popularity\nn_negatives=5\nlr=0.003\n"), {});
  const auto kv = cml::to_key_values(c);
  const auto again = cml::resolve_config(kv_of(cml::format_key_values(kv)), {});
  EXPECT_EQ(cml::to_key_values(again), kv);
  EXPECT_DOUBLE_EQ(again.hyper.lr, 0.003);
  EXPECT_EQ(again.sampler.strategy, cml::Strategy::kPopularity);
}

}  // namespace
