#include <dplora/config.hpp>

#include <gtest/gtest.h>

#include <sstream>
#include <string>

using dplora::ConfigValues;
using dplora::TrainConfig;

namespace {

ConfigValues parse(const std::string& text) {
  std::istringstream is(text);
  return dplora::parse_config_text(is);
}

// Error-message check helper: resolves and reports what the message said.
void expect_config_error(const std::string& text, const std::string& needle) {
  try {
    dplora::resolve_config(parse(text));
    FAIL() << "expected ConfigError containing '" << needle << "'";
  } catch (const dplora::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos)
        << "message was: " << e.what();
  }
}

}  // namespace

TEST(ConfigDefaults, EmptyInputYieldsTable) {
  TrainConfig c = dplora::resolve_config(ConfigValues{});
  EXPECT_EQ(c.seed, 42u);
  EXPECT_FALSE(c.baseline);
  EXPECT_EQ(c.nodes, 5u);
  EXPECT_EQ(c.rounds, 50u);
  EXPECT_EQ(c.batch, 8u);
  EXPECT_DOUBLE_EQ(c.learning_rate, 5e-4);
  EXPECT_EQ(c.local_steps, 1u);
  EXPECT_EQ(c.layers, 1u);
  EXPECT_EQ(c.width, 512u);
  EXPECT_EQ(c.rank, 512u);
  EXPECT_EQ(c.dim, 512u);
  EXPECT_EQ(c.samples, 2000u);
  EXPECT_EQ(c.classes, 2u);
  EXPECT_DOUBLE_EQ(c.margin, 10.0);
  ASSERT_TRUE(c.sigma.has_value());
  EXPECT_DOUBLE_EQ(*c.sigma, 2.0);
  EXPECT_FALSE(c.eps_target.has_value());
  EXPECT_DOUBLE_EQ(c.delta, 1e-5);
  EXPECT_DOUBLE_EQ(c.clip, 10.0);
  EXPECT_EQ(c.accountant, dplora::Accountant::kMoments);
  EXPECT_EQ(c.bytes_per_element, 4u);
}

TEST(ConfigParse, SectionsAndKeys) {
  ConfigValues v = parse(
      "# comment\n"
      "[run]\n"
      "seed = 7\n"
      "baseline = false\n"
      "\n"
      "[federation]\n"
      "nodes = 3\n"
      "weights = 0.5, 0.25, 0.25\n"
      "\n"
      "[model]\n"
      "width = 64\n"
      "rank = 8\n"
      "\n"
      "[data]\n"
      "samples = 300\n"
      "partition = dirichlet\n"
      "alpha = 0.5\n"
      "\n"
      "[privacy]\n"
      "sigma = 1.5\n"
      "clip = 4\n");
  EXPECT_EQ(*v.seed, 7u);
  EXPECT_EQ(*v.nodes, 3u);
  ASSERT_TRUE(v.weights.has_value());
  EXPECT_EQ(v.weights->size(), 3u);
  EXPECT_DOUBLE_EQ((*v.weights)[0], 0.5);
  EXPECT_EQ(*v.width, 64u);
  EXPECT_EQ(*v.partition, "dirichlet");
  EXPECT_DOUBLE_EQ(*v.sigma, 1.5);

  TrainConfig c = dplora::resolve_config(v);
  EXPECT_EQ(c.nodes, 3u);
  EXPECT_EQ(c.width, 64u);
  EXPECT_EQ(c.dim, 64u);  // dim mirrors width
  EXPECT_EQ(c.partition, dplora::PartitionMode::kDirichlet);
}

TEST(ConfigParse, UnknownKeyNamesCulprit) {
  try {
    parse("[privacy]\nsigm = 2\n");
    FAIL() << "expected ConfigError";
  } catch (const dplora::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("privacy.sigm"), std::string::npos)
        << e.what();
  }
}

TEST(ConfigParse, StructuralErrors) {
  EXPECT_THROW(parse("[nonsense]\n"), dplora::ConfigError);
  EXPECT_THROW(parse("[run\nseed = 1\n"), dplora::ConfigError);
  EXPECT_THROW(parse("seed = 1\n"), dplora::ConfigError);       // key before section
  EXPECT_THROW(parse("[run]\nseed 1\n"), dplora::ConfigError);  // no '='
  EXPECT_THROW(parse("[run]\nseed = abc\n"), dplora::ConfigError);
  EXPECT_THROW(parse("[federation]\nweights = 0.5,,0.5\n"), dplora::ConfigError);
}

TEST(ConfigMerge, OverlayWins) {
  ConfigValues file = parse("[model]\nrank = 512\nwidth = 512\n[privacy]\nsigma = 2\n");
  ConfigValues flags;
  flags.rank = 64;
  ConfigValues merged = dplora::merge_config(file, flags);
  EXPECT_EQ(*merged.rank, 64u);
  EXPECT_EQ(*merged.width, 512u);  // untouched value survives
  TrainConfig c = dplora::resolve_config(merged);
  EXPECT_EQ(c.rank, 64u);
}

TEST(ConfigResolve, SigmaEpsilonExclusive) {
  expect_config_error("[privacy]\nsigma = 2\nepsilon = 1\n", "mutually exclusive");
}

TEST(ConfigResolve, EpsilonEngagesCalibration) {
  TrainConfig c = dplora::resolve_config(parse("[privacy]\nepsilon = 2\n"));
  EXPECT_FALSE(c.sigma.has_value());
  ASSERT_TRUE(c.eps_target.has_value());
  EXPECT_DOUBLE_EQ(*c.eps_target, 2.0);
}

TEST(ConfigResolve, WidthDimMirror) {
  TrainConfig c = dplora::resolve_config(parse("[data]\ndim = 128\n"));
  EXPECT_EQ(c.width, 128u);
  EXPECT_EQ(c.dim, 128u);
  expect_config_error("[model]\nwidth = 64\n[data]\ndim = 128\n", "must be equal");
}

TEST(ConfigResolve, DefaultRankTracksSmallWidth) {
  TrainConfig c =
      dplora::resolve_config(parse("[model]\nwidth = 32\n[data]\nsamples = 40\n"));
  EXPECT_EQ(c.rank, 32u);
  expect_config_error("[model]\nwidth = 32\nrank = 64\n[data]\nsamples = 40\n",
                      "model.rank");
}

TEST(ConfigResolve, WeightsValidated) {
  expect_config_error("[federation]\nweights = 0.5,0.5\n", "expected 5 entries");
  expect_config_error(
      "[federation]\nnodes = 2\nweights = 0.6,0.6\n[data]\nsamples = 16\n",
      "sum to 1");
  expect_config_error(
      "[federation]\nnodes = 2\nweights = 1.5,-0.5\n[data]\nsamples = 16\n",
      "nonnegative");
  TrainConfig c = dplora::resolve_config(
      parse("[federation]\nnodes = 2\nweights = 0.75,0.25\n[data]\nsamples = 16\n"));
  ASSERT_EQ(c.weight_override.size(), 2u);
  EXPECT_DOUBLE_EQ(c.weight_override[0], 0.75);
}

TEST(ConfigResolve, ClipInfinityDisablesClipping) {
  TrainConfig c = dplora::resolve_config(parse("[privacy]\nsigma = 0\nclip = inf\n"));
  EXPECT_FALSE(c.clip_enabled());
  // Noise without a finite clip has unbounded sensitivity.
  expect_config_error("[privacy]\nsigma = 2\nclip = inf\n", "clip");
  expect_config_error("[privacy]\nepsilon = 1\nclip = inf\n", "clip");
}

TEST(ConfigResolve, BaselineForcesPrivacyOff) {
  TrainConfig c = dplora::resolve_config(parse("[run]\nbaseline = true\n"));
  EXPECT_TRUE(c.baseline);
  ASSERT_TRUE(c.sigma.has_value());
  EXPECT_EQ(*c.sigma, 0.0);
  EXPECT_FALSE(c.eps_target.has_value());

  expect_config_error("[run]\nbaseline = true\n[privacy]\nsigma = 2\n", "baseline");
  expect_config_error("[run]\nbaseline = true\n[privacy]\nepsilon = 1\n", "baseline");
  // Explicit sigma = 0 is consistent with a baseline run.
  EXPECT_NO_THROW(
      dplora::resolve_config(parse("[run]\nbaseline = true\n[privacy]\nsigma = 0\n")));
}

TEST(ConfigResolve, SampleBudgetCoversNodes) {
  expect_config_error("[federation]\nnodes = 4\nbatch = 8\n[data]\nsamples = 31\n",
                      "data.samples");
  EXPECT_NO_THROW(dplora::resolve_config(
      parse("[federation]\nnodes = 4\nbatch = 8\n[data]\nsamples = 32\n")));
}

TEST(ConfigResolve, RangeChecks) {
  expect_config_error("[federation]\nnodes = 0\n", "federation.nodes");
  expect_config_error("[federation]\nrounds = 0\n", "federation.rounds");
  expect_config_error("[federation]\nthreads = 0\n", "federation.threads");
  expect_config_error("[privacy]\ndelta = 0\n", "privacy.delta");
  expect_config_error("[privacy]\ndelta = 1\n", "privacy.delta");
  expect_config_error("[privacy]\nclip = 0\n", "privacy.clip");
  expect_config_error("[privacy]\nsigma = -1\n", "privacy.sigma");
  expect_config_error("[privacy]\naccountant = magic\n", "privacy.accountant");
  expect_config_error("[privacy]\ncalibration = magic\n", "privacy.calibration");
  expect_config_error("[data]\npartition = random\n", "data.partition");
  expect_config_error("[run]\nbytes_per_element = 2\n", "bytes_per_element");
  expect_config_error("[data]\nclasses = 600\n", "data.classes");
}

TEST(ConfigResolve, AccountantAndCalibrationModes) {
  TrainConfig c = dplora::resolve_config(parse("[privacy]\naccountant = sequential\n"));
  EXPECT_EQ(c.accountant, dplora::Accountant::kSequential);

  c = dplora::resolve_config(parse("[privacy]\nepsilon = 1\ncalibration = proof\n"));
  EXPECT_EQ(c.calibration_form, dplora::CalibrationForm::kProof);
  EXPECT_FALSE(c.calibration_numeric);

  c = dplora::resolve_config(parse("[privacy]\nepsilon = 1\ncalibration = numeric\n"));
  EXPECT_TRUE(c.calibration_numeric);
}

TEST(ConfigEcho, RoundTripsThroughParser) {
  ConfigValues v = parse(
      "[run]\nseed = 9\n[federation]\nnodes = 3\nweights = 0.5,0.25,0.25\n"
      "[model]\nwidth = 48\nrank = 6\nscale = 1.5\n"
      "[data]\nsamples = 120\nclasses = 3\nmargin = 2.5\n"
      "[privacy]\nsigma = 1.25\nclip = 7\naccountant = sequential\n");
  TrainConfig c = dplora::resolve_config(v);

  std::string echoed = dplora::echo_config(c);
  TrainConfig back = dplora::resolve_config(parse(echoed));

  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.nodes, c.nodes);
  EXPECT_EQ(back.width, c.width);
  EXPECT_EQ(back.rank, c.rank);
  EXPECT_DOUBLE_EQ(back.adapter_scale, c.adapter_scale);
  EXPECT_EQ(back.samples, c.samples);
  EXPECT_EQ(back.classes, c.classes);
  EXPECT_DOUBLE_EQ(back.margin, c.margin);
  ASSERT_EQ(back.weight_override.size(), 3u);
  EXPECT_DOUBLE_EQ(back.weight_override[1], 0.25);
  ASSERT_TRUE(back.sigma.has_value());
  EXPECT_DOUBLE_EQ(*back.sigma, 1.25);
  EXPECT_EQ(back.accountant, dplora::Accountant::kSequential);
  EXPECT_DOUBLE_EQ(back.delta, c.delta);
  EXPECT_DOUBLE_EQ(back.clip, c.clip);

  // Echoing the round-tripped config reproduces the same text.
  EXPECT_EQ(dplora::echo_config(back), echoed);
}

TEST(ConfigEcho, CalibratedSigmaReplacesEpsilon) {
  TrainConfig c = dplora::resolve_config(parse("[privacy]\nepsilon = 2\n"));
  std::string echoed = dplora::echo_config(c, 1.365);
  // The echoed file must re-parse standalone, with the derived sigma pinned.
  TrainConfig back = dplora::resolve_config(parse(echoed));
  ASSERT_TRUE(back.sigma.has_value());
  EXPECT_DOUBLE_EQ(*back.sigma, 1.365);
  EXPECT_FALSE(back.eps_target.has_value());
}

TEST(ConfigFile, MissingFileThrows) {
  EXPECT_THROW(dplora::parse_config_file("/nonexistent/path.ini"), dplora::ConfigError);
}
