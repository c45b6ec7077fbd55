#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "chainlearn/config.hpp"
#include "chainlearn/protocol.hpp"
#include "chainlearn/report.hpp"

using namespace chainlearn;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(seed = 2
data.pool_per_class = 60
data.test_per_class = 20
model.arch = flatten,dense:16,relu,dense:10
train.max_epochs = 5
he.non_negative = true
fusion.epochs = 10
fusion.stage0_epochs = 3
verify.epochs = 5
partition.count = 2
partition.1.labels = 0,1,2,3,4
partition.1.train = 100
partition.1.verify = 30
partition.2.labels = 5,6,7,8,9
partition.2.train = 100
partition.2.verify = 30
sample.train = 100
sample.verify = 50
)";

fs::path scratch() {
  auto p = fs::temp_directory_path() / "chainlearn-report-test";
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string("\"") + CHAINLEARN_CLI + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json tiny_report() {
  static const auto r = protocol::run_scenario(config::parse(kTinyConfig));
  return nlohmann::json::parse(r.report_text);
}

}  // namespace

TEST(Report, PctFormatting) {
  EXPECT_EQ(report::pct(0.9731), "97.3");
  EXPECT_EQ(report::pct(nullptr), "-");
}

TEST(Report, RenderMentionsContributorsAndLedger) {
  const auto text = report::render(tiny_report());
  EXPECT_NE(text.find("c1"), std::string::npos);
  EXPECT_NE(text.find("c2"), std::string::npos);
  EXPECT_NE(text.find(tiny_report()["ledger"]["head_hash"].get<std::string>().substr(0, 12)), std::string::npos);
}

TEST(Report, TrendChecksFlagDoctoredReports) {
  auto r = tiny_report();
  r["ledger"]["chain_valid"] = false;
  r["ledger"]["supply_conserved"] = false;
  auto fails = report::check_trends(r);
  EXPECT_GE(fails.size(), 2u);

  r = tiny_report();
  auto& traj = r["fusion"]["trajectory"];
  if (traj.size() >= 2) {
    traj[1]["accuracy"] = traj[0]["accuracy"];
    fails = report::check_trends(r);
    bool found = false;
    for (const auto& f : fails) found = found || f.find("does not increase") != std::string::npos;
    EXPECT_TRUE(found);
  }
  r = tiny_report();
  r["inference"][0]["argmax_agreement"] = 0.5;
  fails = report::check_trends(r);
  EXPECT_FALSE(fails.empty());
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch();
  write(dir / "tiny.conf", kTinyConfig);
  write(dir / "bad.conf", "seed = 1\nno.such.key = 2\n");
  const auto conf = (dir / "tiny.conf").string();

  EXPECT_EQ(cli("run --config " + conf + " --out " + (dir / "a.json").string() + " --chain " +
                (dir / "a.jsonl").string()),
            0);
  EXPECT_EQ(cli("run --config " + conf + " --out " + (dir / "b.json").string() + " --chain " +
                (dir / "b.jsonl").string()),
            0);
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));

  EXPECT_EQ(cli("run --config " + (dir / "bad.conf").string()), 2);
  EXPECT_EQ(cli("run --config " + (dir / "missing.conf").string()), 2);
  EXPECT_EQ(cli("run"), 2);
  EXPECT_EQ(cli("frobnicate"), 2);

  EXPECT_EQ(cli("verify-chain --in " + (dir / "a.jsonl").string()), 0);
  auto chain = slurp(dir / "a.jsonl");
  const auto pos = chain.find("\"amount\":");
  ASSERT_NE(pos, std::string::npos);
  chain[pos + 9] = chain[pos + 9] == '1' ? '2' : '1';
  write(dir / "bad.jsonl", chain);
  EXPECT_EQ(cli("verify-chain --in " + (dir / "bad.jsonl").string()), 3);

  EXPECT_EQ(cli("render --in " + (dir / "a.json").string()), 0);
  EXPECT_EQ(cli("config-schema"), 0);
  EXPECT_EQ(cli("show-config --config " + conf), 0);
  EXPECT_EQ(cli("gen-data --kind digits --count 2 --test-count 1 --out " + (dir / "digits").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "digits" / "train-images-idx3-ubyte"));
  EXPECT_EQ(cli("gen-data --kind video --out " + (dir / "x").string()), 2);
  fs::remove_all(dir);
}

TEST(Cli, CheckFlagReportsTrendFailures) {
  const auto dir = scratch() / "check";
  fs::create_directories(dir);
  // Under-trained tiny runs rarely satisfy every trend; the exit code must
  // agree with check_trends either way.
  write(dir / "tiny.conf", kTinyConfig);
  const int code = cli("run --check --config " + (dir / "tiny.conf").string());
  EXPECT_EQ(code, report::check_trends(tiny_report()).empty() ? 0 : 3);
  fs::remove_all(dir);
}
