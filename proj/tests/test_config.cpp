#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "fedsim/config.hpp"
#include "test_util.hpp"

using namespace fedsim;

TEST(Config, DefaultsAreValid) { EXPECT_NO_THROW(validate(ExperimentConfig{})); }

TEST(Config, ParsesKeysCommentsAndWhitespace) {
  const auto c = parse_config_string(
      "# experiment\n"
      "strategy = folb_het\n"
      "  num_devices=12  \n"
      "clients_per_round = 4   # K\n"
      "\n"
      "rounds = 7\n"
      "mu = 0.01\n"
      "psi = 10\n"
      "tau = 25.5\n"
      "weighting = size\n"
      "model = mlp1\n"
      "hidden = 8\n"
      "seed = 99\n"
      "synthetic_iid = true\n");
  EXPECT_EQ(c.strategy, Strategy::kFolbHet);
  EXPECT_EQ(c.num_devices, 12u);
  EXPECT_EQ(c.clients_per_round, 4u);
  EXPECT_EQ(c.rounds, 7u);
  EXPECT_DOUBLE_EQ(c.mu, 0.01);
  EXPECT_DOUBLE_EQ(c.psi, 10.0);
  EXPECT_DOUBLE_EQ(c.tau, 25.5);
  EXPECT_TRUE(c.weight_by_size);
  EXPECT_EQ(c.model, ModelKind::kMlp1);
  EXPECT_EQ(c.hidden, 8u);
  EXPECT_EQ(c.seed, 99u);
  EXPECT_TRUE(c.synthetic_iid);
}

TEST(Config, UnknownKeyRejectedWithLine) {
  try {
    parse_config_string("rounds = 3\nlearning_rat = 0.1\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("learning_rat"), std::string::npos) << msg;
  }
}

TEST(Config, MalformedValuesRejected) {
  EXPECT_THROW(parse_config_string("rounds = ten\n"), ConfigError);
  EXPECT_THROW(parse_config_string("mu = 0.1x\n"), ConfigError);
  EXPECT_THROW(parse_config_string("strategy = fedsgd\n"), ConfigError);
  EXPECT_THROW(parse_config_string("weighting = random\n"), ConfigError);
  EXPECT_THROW(parse_config_string("full_information = maybe\n"), ConfigError);
  EXPECT_THROW(parse_config_string("just a line\n"), ConfigError);
}

TEST(Config, ValidationRules) {
  auto bad = [](auto mutate) {
    ExperimentConfig c;
    mutate(c);
    EXPECT_THROW(validate(c), ConfigError);
  };
  bad([](ExperimentConfig& c) { c.clients_per_round = 0; });
  bad([](ExperimentConfig& c) { c.clients_per_round = c.num_devices + 1; });
  bad([](ExperimentConfig& c) { c.rounds = 0; });
  bad([](ExperimentConfig& c) { c.mu = -1.0; });
  bad([](ExperimentConfig& c) { c.mu = std::nan(""); });
  bad([](ExperimentConfig& c) { c.psi = 1.0; });  // psi needs folb_het
  bad([](ExperimentConfig& c) {
    c.strategy = Strategy::kFolbHet;
    c.psi = -1.0;
  });
  bad([](ExperimentConfig& c) { c.tau = 0.0; });
  bad([](ExperimentConfig& c) { c.strategy = Strategy::kFedNuExact; });
  bad([](ExperimentConfig& c) { c.strategy = Strategy::kFedNuNorm; });
  bad([](ExperimentConfig& c) { c.step_min = 0; });
  bad([](ExperimentConfig& c) { c.step_min = 30; });
  bad([](ExperimentConfig& c) { c.learning_rate = 0.0; });
  bad([](ExperimentConfig& c) { c.data_source = DataSource::kCsv; });
  bad([](ExperimentConfig& c) { c.data_source = DataSource::kShards; });

  ExperimentConfig ok;
  ok.strategy = Strategy::kFedNuExact;
  ok.full_information = true;
  EXPECT_NO_THROW(validate(ok));
  ok.clients_per_round = ok.num_devices;
  EXPECT_NO_THROW(validate(ok));
}

TEST(Config, TextRoundTrip) {
  ExperimentConfig c;
  c.strategy = Strategy::kFolbHet;
  c.psi = 0.1;
  c.mu = 1e-4;
  c.learning_rate = 0.1 + 0.2;  // not exactly representable in short decimal
  c.csv_path = "data/x.csv";
  c.label_column = 0;
  c.weight_by_size = true;
  c.comm_delay_mean = 2.5;
  const auto back = parse_config_string(to_text(c));
  EXPECT_EQ(to_text(back), to_text(c));
  EXPECT_EQ(back.learning_rate, c.learning_rate);
  EXPECT_TRUE(std::isinf(parse_config_string(to_text(ExperimentConfig{})).tau));
}

TEST(Config, LoadFromFileNamesPath) {
  const auto dir = fedsim::testing::scratch_dir("config_load");
  const auto path = (dir / "run.cfg").string();
  {
    std::ofstream out(path);
    out << "rounds = 5\nbogus = 1\n";
  }
  try {
    load_config(path);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
  }
  EXPECT_THROW(load_config((dir / "missing.cfg").string()), ConfigError);
}

TEST(Config, StrategyNamesRoundTrip) {
  for (auto s : {Strategy::kFedAvg, Strategy::kFedProx, Strategy::kFedNuExact, Strategy::kFedNuNorm,
                 Strategy::kFolbTwoSet, Strategy::kFolbSingle, Strategy::kFolbHet}) {
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  }
}
