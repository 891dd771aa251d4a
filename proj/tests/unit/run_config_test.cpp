#include <gtest/gtest.h>

#include "sttm/errors.hpp"
#include "sttm/run_config.hpp"

namespace {

TEST(RunConfig, DefaultsMatchReferenceSettings) {
  const sttm::RunConfig c;
  EXPECT_EQ(c.model.m, 10u);
  EXPECT_EQ(c.model.n, 6u);
  EXPECT_EQ(c.model.hidden, 256u);
  EXPECT_EQ(c.model.mem_patterns, 12u);
  EXPECT_EQ(c.model.mem_dim, 64u);
  EXPECT_EQ(c.train.batch_size, 512u);
  EXPECT_EQ(c.train.learning_rate, 1e-3);
  EXPECT_EQ(c.train.epochs, 1);
  EXPECT_EQ(c.features.split.train, 14);
  EXPECT_EQ(c.features.split.validation, 1);
  EXPECT_EQ(c.features.split.test, 3);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, FormatThenParseRoundTrips) {
  sttm::RunConfig c;
  c.seed = 9;
  c.sim.peak_multipliers = {0.5, 1, 1.5, 2, 2.5, 0};
  c.model.variant = sttm::model::Variant::kNoMemory;
  c.model.dropout = 0.25;
  c.train.learning_rate = 3e-4;
  c.eval.split = sttm::features::Split::kValidation;
  c.paths.reports = "out/r";
  const auto text = sttm::format_config(c);
  const auto back = sttm::parse_config(text);
  EXPECT_EQ(sttm::format_config(back), text);
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(back.paths.reports, "out/r");
}

TEST(RunConfig, EveryKeyReadsBackWhatWasFormatted) {
  const sttm::RunConfig c;
  const auto text = sttm::format_config(c);
  for (const auto& key : sttm::config_keys()) {
    EXPECT_NE(text.find(key + " = " + sttm::get_config_value(c, key)), std::string::npos) << key;
  }
}

TEST(RunConfig, CommentsAndBlankLinesAreIgnored) {
  const auto c = sttm::parse_config("# header\n\nmodel.l_mem = 14  # patterns\n  seed=5\n");
  EXPECT_EQ(c.model.mem_patterns, 14u);
  EXPECT_EQ(c.seed, 5u);
}

TEST(RunConfig, UnknownKeyReportsLine) {
  try {
    sttm::parse_config("seed = 1\nmodel.hidden_size = 4\n", "x.conf");
    FAIL();
  } catch (const sttm::ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("model.hidden_size"), std::string::npos);
  }
}

TEST(RunConfig, MalformedValuesAreRejected) {
  for (const char* text : {"seed = -1", "model.h = 12x", "model.dropout = abc", "sim.peak_multipliers = 1,2",
                           "train.shuffle = maybe", "model.variant = no_attention", "eval.split = dev",
                           "no equals sign"}) {
    EXPECT_THROW(sttm::parse_config(text), sttm::ParseError) << text;
  }
}

TEST(RunConfig, SetValueOverridesAndNamesUnknownKeys) {
  sttm::RunConfig c;
  sttm::set_config_value(c, "train.batch_size", "64");
  EXPECT_EQ(c.train.batch_size, 64u);
  EXPECT_THROW(sttm::set_config_value(c, "train.batch", "64"), sttm::ConfigError);
}

TEST(RunConfig, HashIgnoresPathsButNotSettings) {
  sttm::RunConfig a, b;
  b.paths.dataset = "elsewhere.bin";
  EXPECT_EQ(a.hash(), b.hash());
  b.features.n = 5;
  EXPECT_NE(a.hash(), b.hash());
}

TEST(RunConfig, ValidateRejectsInvalidSections) {
  sttm::RunConfig c;
  c.model.heads = 5;
  EXPECT_THROW(c.validate(), sttm::ConfigError);
  c = {};
  c.features.n = 100;
  EXPECT_THROW(c.validate(), sttm::ConfigError);
}

}  // namespace
