#include <gtest/gtest.h>

#include <map>

#include "chainlearn/config.hpp"
#include "chainlearn/datasets.hpp"
#include "chainlearn/protocol.hpp"

using namespace chainlearn;
using namespace chainlearn::protocol;

namespace {

config::ScenarioConfig tiny() {
  return config::parse(R"(seed = 1
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
)");
}

config::ScenarioConfig tiny_seeded(std::uint64_t seed) {
  auto c = tiny();
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Network, PerLinkFifoUnderRandomDelays) {
  Rng rng(1);
  for (int round = 0; round < 50; ++round) {
    SimNetwork net(rng.next_u64(), 1, 6, 0.0);
    const std::vector<std::string> nodes{"a", "b", "c"};
    std::map<std::pair<std::string, std::string>, std::uint64_t> next_body;
    std::map<std::pair<std::string, std::string>, std::uint64_t> expect;
    std::uint64_t sent = 0, got = 0;
    for (std::uint64_t tick = 0; tick < 60; ++tick) {
      for (int k = 0, n = static_cast<int>(rng.uniform_int(0, 4)); k < n && tick < 40; ++k) {
        Message m;
        m.from = nodes[static_cast<std::size_t>(rng.uniform_int(0, 2))];
        m.to = nodes[static_cast<std::size_t>(rng.uniform_int(0, 2))];
        m.kind = "invite";
        m.body = std::to_string(next_body[{m.from, m.to}]++);
        net.send(m, tick);
        ++sent;
      }
      for (const auto& m : net.deliver(tick)) {
        ASSERT_LE(m.deliver_tick, tick);
        ASSERT_GE(m.deliver_tick, m.sent_tick + 1);
        auto& e = expect[{m.from, m.to}];
        ASSERT_EQ(m.body, std::to_string(e)) << m.from << "->" << m.to;
        ++e;
        ++got;
      }
    }
    EXPECT_TRUE(net.idle());
    EXPECT_EQ(sent, got);
    EXPECT_EQ(net.stats().delivered, got);
  }
}

TEST(Network, DropsAreCounted) {
  SimNetwork net(5, 1, 1, 0.5);
  for (int i = 0; i < 1000; ++i) net.send({"a", "b", "invite", "x", 0, 0, 0}, 0);
  const auto got = net.deliver(10).size();
  EXPECT_EQ(net.stats().dropped + got, 1000u);
  EXPECT_GT(net.stats().dropped, 400u);
  EXPECT_LT(net.stats().dropped, 600u);
}

TEST(KeyVault, LogsAndPoisons) {
  KeyVault v("initiator", ivhe::SecretKey::identity(1));
  v.secret("initiator");
  v.secret("auditor");
  EXPECT_EQ(v.access_log(), (std::vector<std::string>{"initiator", "auditor"}));
  v.poison();
  EXPECT_NO_THROW(v.secret("initiator"));
  EXPECT_THROW(v.secret("v1"), PrivacyError);
}

TEST(Scenario, RunsUnderPoisonedVaultAndOnlyOwnerReadsKey) {
  RunHooks hooks;
  hooks.poison_key = true;
  const auto r = run_scenario(tiny_seeded(3), hooks);
  ASSERT_FALSE(r.key_access_log.empty());
  for (const auto& who : r.key_access_log) EXPECT_EQ(who, "initiator");
  EXPECT_NO_THROW(validate_report(r.report));
  EXPECT_TRUE(r.report["ledger"]["chain_valid"].get<bool>());
  EXPECT_TRUE(r.report["ledger"]["supply_conserved"].get<bool>());
}

TEST(Scenario, DeterministicForASeed) {
  const auto a = run_scenario(tiny_seeded(4));
  const auto b = run_scenario(tiny_seeded(4));
  EXPECT_EQ(a.report_text, b.report_text);
  EXPECT_EQ(a.chain_jsonl, b.chain_jsonl);
  const auto c = run_scenario(tiny_seeded(5));
  EXPECT_NE(a.chain_jsonl, c.chain_jsonl);
}

TEST(Scenario, VerdictsFollowTheMajority) {
  for (std::uint64_t seed : {6, 7}) {
    const auto r = run_scenario(tiny_seeded(seed));
    std::map<std::string, std::pair<int, int>> tally;
    for (const auto& v : r.votes) (v.vote ? tally[v.model_ref].first : tally[v.model_ref].second)++;
    for (const auto& verdict : r.report["verdicts"]) {
      const auto ref = verdict["model_ref"].get<std::string>();
      EXPECT_EQ(verdict["yes"].get<int>(), tally[ref].first);
      EXPECT_EQ(verdict["no"].get<int>(), tally[ref].second);
      EXPECT_EQ(verdict["accepted"].get<bool>(), tally[ref].first > tally[ref].second);
    }
  }
}

TEST(Scenario, VoteFilterCanRejectEverything) {
  RunHooks hooks;
  hooks.vote_filter = [](const std::string&, const std::string&, bool) { return false; };
  const auto r = run_scenario(tiny_seeded(8), hooks);
  for (const auto& v : r.report["verdicts"]) EXPECT_FALSE(v["accepted"].get<bool>());
  EXPECT_TRUE(r.report["fusion"]["accepted"].empty());
  EXPECT_FALSE(r.meta.has_value());
  EXPECT_TRUE(r.report["ledger"]["supply_conserved"].get<bool>());
}

TEST(Scenario, DepartedContributorIsNotFused) {
  auto cfg = tiny_seeded(9);
  cfg.depart = "2@2";
  const auto r = run_scenario(cfg);
  ASSERT_EQ(r.contributors.size(), 2u);
  EXPECT_TRUE(r.contributors[1].departed_tick.has_value());
  EXPECT_TRUE(r.contributors[1].model_ref.empty());
  EXPECT_EQ(r.report["fusion"]["accepted"].size(), r.contributors[0].model_ref.empty() ? 0u : 1u);
}

TEST(Scenario, DirectoryStoreHoldsEveryBlob) {
  const auto root = std::filesystem::temp_directory_path() / "chainlearn-protocol-store";
  std::filesystem::remove_all(root);
  RunHooks hooks;
  hooks.store_root = root;
  const auto r = run_scenario(tiny_seeded(10), hooks);
  castore::Store reopened(root);
  for (const auto& c : r.contributors)
    if (!c.model_ref.empty()) EXPECT_TRUE(reopened.contains(c.model_ref));
  std::filesystem::remove_all(root);
}

TEST(Verifier, RejectsDuplicatesForeignKeysAndGarbage) {
  const auto r = run_scenario(tiny_seeded(11));
  ASSERT_GE(r.contributors.size(), 2u);
  // Rebuild the public inputs a verifier sees.
  castore::Store store;
  ivhe::HEParams hp;
  hp.non_negative = true;
  const auto km = ivhe::gen_keys(hp, 1), other = ivhe::gen_keys(hp, 2);
  auto sample = data::synthetic_digits(15, 3);
  sample.splits.clear();
  for (std::size_t i = 0; i < sample.size(); ++i) sample.splits.push_back(i % 3 == 0 ? nn::Split::Verify : nn::Split::Train);
  const auto sample_ref = store.put(data::serialize(sample), castore::MediaTag::Dataset).digest;
  const auto put_model = [&](const nn::LayeredModel& m, const ivhe::SwitchKey& key) {
    const auto em = cipher::encrypt_elementwise(cipher::quantize(m, 128, 1000), key);
    return store.put(cipher::serialize(em), castore::MediaTag::EncryptedModel).digest;
  };
  const auto a = put_model(r.plain_models[0], km.switch_key);
  const auto b = put_model(r.plain_models[1], km.switch_key);
  const auto foreign = put_model(r.plain_models[1], other.switch_key);
  const auto junk = store.put(std::string_view("not a model"), castore::MediaTag::EncryptedModel).digest;

  VerificationJob job;
  job.sample_ref = sample_ref;
  job.seed = 5;
  job.cfg.epochs = 5;

  job.candidate_ref = a;
  const auto first = verify_candidate(job, km.switch_key, store);
  EXPECT_DOUBLE_EQ(first.baseline_accuracy, 0.1);
  EXPECT_EQ(first.vote, first.fused_accuracy > 0.1);

  job.accepted_refs = {a};
  job.candidate_ref = a;
  auto v = verify_candidate(job, km.switch_key, store);
  EXPECT_FALSE(v.vote);
  EXPECT_NE(v.diagnostic.find("duplicates"), std::string::npos);

  job.candidate_ref = foreign;
  v = verify_candidate(job, km.switch_key, store);
  EXPECT_FALSE(v.vote);
  EXPECT_NE(v.diagnostic.find("different key"), std::string::npos);

  job.candidate_ref = junk;
  v = verify_candidate(job, km.switch_key, store);
  EXPECT_FALSE(v.vote);
  EXPECT_NE(v.diagnostic.find("malformed"), std::string::npos);

  job.candidate_ref = std::string(64, 'f');
  EXPECT_FALSE(verify_candidate(job, km.switch_key, store).vote);

  job.candidate_ref = b;
  FeatureCache cache;
  const auto v1 = verify_candidate(job, km.switch_key, store, &cache);
  EXPECT_EQ(cache.size(), 2u);
  const auto v2 = verify_candidate(job, km.switch_key, store, &cache);
  EXPECT_EQ(v1.fused_accuracy, v2.fused_accuracy);
  EXPECT_EQ(v1.vote, v1.fused_accuracy > v1.baseline_accuracy);
}

TEST(Report, SchemaValidation) {
  const auto r = run_scenario(tiny_seeded(12));
  nlohmann::json j = nlohmann::json::parse(r.report_text);
  EXPECT_NO_THROW(validate_report(j));
  auto bad = j;
  bad.erase("ledger");
  EXPECT_THROW(validate_report(bad), FormatError);
  bad = j;
  bad["seed"] = "one";
  EXPECT_THROW(validate_report(bad), FormatError);
}
