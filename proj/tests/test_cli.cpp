// Copyright 2026 The boxmatch Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "boxmatch/bench.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace
{

namespace fs = std::filesystem;
using namespace boxmatch;

class Cli : public ::testing::Test
{
protected:
  void SetUp() override
  {
    dir_ = fs::temp_directory_path() /
           ("boxmatch_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string & args, const std::string & env = "") const
  {
    const std::string cmd = "cd '" + dir_.string() + "' && " + env + " '" BOXMATCH_CLI "' " + args +
                            " >out.txt 2>err.txt";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string read(const std::string & name) const
  {
    std::ifstream in(dir_ / name, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  void write(const std::string & name, const std::string & text) const
  {
    std::ofstream(dir_ / name, std::ios::binary) << text;
  }

  void write_small_config() const
  {
    trainloop::TrainConfig tc;
    tc.model.channels = 16;
    tc.sensor.channels = 16;
    tc.model.heads = 2;
    tc.epochs = 1;
    tc.lr = 1e-3;
    write("train.json", trainloop::to_json(tc).dump());
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenIsDeterministic)
{
  ASSERT_EQ(run("gen --out a.jsonl --count 12 --seed 4"), 0);
  ASSERT_EQ(run("gen --out b.jsonl --count 12 --seed 4"), 0);
  ASSERT_EQ(run("gen --out c.jsonl --count 12 --seed 5"), 0);
  EXPECT_EQ(read("a.jsonl"), read("b.jsonl"));
  EXPECT_NE(read("a.jsonl"), read("c.jsonl"));
  EXPECT_EQ(worldsim::scenes_from_jsonl(read("a.jsonl")).size(), 12U);
}

TEST_F(Cli, GenZeroCount)
{
  ASSERT_EQ(run("gen --out z.jsonl --count 0"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "z.jsonl"));
  const auto text = read("z.jsonl");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  EXPECT_TRUE(worldsim::scenes_from_jsonl(text).empty());
}

TEST_F(Cli, SeedEnvironmentOverridesFlag)
{
  ASSERT_EQ(run("gen --out a.jsonl --count 3 --seed 8"), 0);
  ASSERT_EQ(run("gen --out b.jsonl --count 3 --seed 1", "BOXMATCH_SEED=8"), 0);
  EXPECT_EQ(read("a.jsonl"), read("b.jsonl"));
  EXPECT_EQ(run("gen --out c.jsonl --count 3", "BOXMATCH_SEED=x8"), 2);
}

TEST_F(Cli, UsageAndRuntimeErrors)
{
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("gen"), 2);
  EXPECT_EQ(run("gen --out a.jsonl --count -1"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("train --scenes missing.jsonl --out m.ckpt"), 1);
  EXPECT_NE(read("err.txt").find("missing.jsonl"), std::string::npos);
  write("bad.json", "{\"epochs\": 1, \"colour\": 3}");
  ASSERT_EQ(run("gen --out s.jsonl --count 2"), 0);
  EXPECT_EQ(run("train --scenes s.jsonl --out m.ckpt --config bad.json"), 2);
  write("bad.csv", "point,axis\nx,y\n");
  EXPECT_EQ(run("report --csv bad.csv --out rep"), 1);
  EXPECT_EQ(run("report --csv bad.csv --out rep --format png"), 2);
}

TEST_F(Cli, EndToEnd)
{
  write_small_config();
  ASSERT_EQ(run("gen --out train.jsonl --count 6 --seed 1"), 0);
  ASSERT_EQ(run("gen --out test.jsonl --count 4 --seed 2"), 0);
  ASSERT_EQ(run("train --scenes train.jsonl --config train.json --out m.ckpt --log log.csv"), 0);
  ASSERT_EQ(run("train --scenes train.jsonl --config train.json --out m2.ckpt"), 0);
  EXPECT_EQ(read("m.ckpt"), read("m2.ckpt"));
  EXPECT_EQ(read("log.csv").rfind("epoch,total,det,view,pro\n0,", 0), 0U);

  ASSERT_EQ(run("eval --ckpt m.ckpt --scenes test.jsonl --async 0.5 --out r.json"), 0);
  const auto report = nlohmann::json::parse(read("r.json"));
  EXPECT_EQ(report["counts"]["scenes"], 4);
  EXPECT_DOUBLE_EQ(report["disturbance"]["async_dt"].get<double>(), 0.5);
  EXPECT_EQ(report["matcher"], "fbm");

  ASSERT_EQ(run("sweep --ckpt m.ckpt --scenes test.jsonl --grid clean,drop --out r.csv"), 0);
  ASSERT_EQ(run("sweep --ckpt m.ckpt --scenes test.jsonl --grid clean,drop --out r2.csv"), 0);
  EXPECT_EQ(read("r.csv"), read("r2.csv"));
  const auto rows = bench::parse_csv(read("r.csv"));
  EXPECT_EQ(rows.size(), 8U);

  ASSERT_EQ(run("report --csv r.csv --out rep"), 0);
  ASSERT_EQ(run("report --csv r.csv --out rep2"), 0);
  EXPECT_EQ(read("rep/f1_drop.svg"), read("rep2/f1_drop.svg"));
  EXPECT_EQ(read("rep/summary.json"), read("rep2/summary.json"));

  ASSERT_EQ(run("sweep --ckpt m.ckpt --scenes test.jsonl --grid '' --out empty.csv"), 0);
  EXPECT_TRUE(bench::parse_csv(read("empty.csv")).empty());
  EXPECT_EQ(run("sweep --ckpt m.ckpt --scenes test.jsonl --grid clean,nope --out x.csv"), 2);

  ASSERT_EQ(run("ablate --ckpt m.ckpt --scenes test.jsonl --out a.csv"), 0);
  EXPECT_EQ(bench::parse_csv(read("a.csv")).size(), 2U);
  EXPECT_EQ(run("ablate --ckpt m.ckpt --one-level-ckpt m.ckpt --scenes test.jsonl --out a.csv"), 2);
}
