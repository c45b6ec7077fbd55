#include <gtest/gtest.h>

#include "chainlearn/ledger.hpp"

using namespace chainlearn;
using namespace chainlearn::ledger;

namespace {

const std::vector<std::string> kAuth{"a1", "a2", "a3"};

struct Sim {
  Ledger ledger{kAuth, {{"init", 1000}, {"c1", 100}, {"c2", 100}, {"v1", 100}, {"v2", 100}, {"v3", 100}}};
  std::uint64_t tick = 0;

  Transaction tx(TxKind kind, const std::string& sender, Payload p) {
    return Transaction{kind, sender, std::move(p), ledger.next_nonce(sender)};
  }
  Block seal(const std::vector<Transaction>& txs) { return ledger.append_block(txs, ++tick); }
};

TaskSpec spec(std::uint64_t window_end = 20) {
  TaskSpec s;
  s.task_id = "t1";
  s.window_end = window_end;
  return s;
}

// Publishes a task and registers two contributors and three verifiers.
void open_task(Sim& sim) {
  sim.seal({sim.tx(TxKind::TaskPublished, "init", {"t1", "sample", "", 600, false, "", spec().to_json().dump()})});
  std::vector<Transaction> regs;
  for (const auto* c : {"c1", "c2"}) regs.push_back(sim.tx(TxKind::Registered, c, {"t1", "", "", 10, false, "computing", ""}));
  for (const auto* v : {"v1", "v2", "v3"}) regs.push_back(sim.tx(TxKind::Registered, v, {"t1", "", "", 10, false, "verifier", ""}));
  sim.seal(regs);
}

std::vector<Block> full_run(Sim& sim) {
  open_task(sim);
  sim.seal({sim.tx(TxKind::ModelAnnounced, "c1", {"t1", "m1", "", 0, false, "", ""}),
            sim.tx(TxKind::ModelAnnounced, "c2", {"t1", "m2", "", 0, false, "", ""})});
  sim.seal({sim.tx(TxKind::VoteCast, "v1", {"t1", "", "m1", 0, true, "", ""}),
            sim.tx(TxKind::VoteCast, "v2", {"t1", "", "m1", 0, true, "", ""}),
            sim.tx(TxKind::VoteCast, "v3", {"t1", "", "m1", 0, false, "", ""})});
  sim.seal({sim.tx(TxKind::VoteCast, "v1", {"t1", "", "m2", 0, false, "", ""}),
            sim.tx(TxKind::VoteCast, "v2", {"t1", "", "m2", 0, false, "", ""}),
            sim.tx(TxKind::VoteCast, "v3", {"t1", "", "m2", 0, true, "", ""})});
  sim.tick = 21;
  sim.seal({sim.tx(TxKind::VerdictSettled, "init", {"t1", "", "", 0, false, "", ""})});
  return sim.ledger.chain();
}

bool detected(const std::string& jsonl) {
  try {
    const auto chain = chain_from_jsonl(jsonl);
    if (!verify_chain(chain, kAuth).ok) return true;
    replay(chain);
  } catch (const Error&) {
    return true;
  }
  return false;
}

}  // namespace

TEST(Ledger, FullRunSettlesAndPays) {
  Sim sim;
  const auto chain = full_run(sim);
  EXPECT_TRUE(verify_chain(chain, kAuth).ok);
  const auto st = sim.ledger.state();
  const auto& task = st.tasks.at("t1");
  EXPECT_EQ(task.state, TaskState::Settled);
  EXPECT_TRUE(*task.models.at("m1").verdict);
  EXPECT_FALSE(*task.models.at("m2").verdict);
  EXPECT_EQ(st.paid.at("c1"), 100);
  EXPECT_EQ(st.paid.count("c2"), 0u);
  EXPECT_EQ(st.paid.at("v1"), 10);  // two verifications at 5 each
  EXPECT_EQ(st.balances.at("init"), 1000 - 100 - 30);
  EXPECT_EQ(st.balances.at("c1"), 100);  // deposit returned
}

TEST(Ledger, ConservationAfterEveryBlock) {
  Sim sim;
  full_run(sim);
  for (auto total : sim.ledger.supply_history()) EXPECT_EQ(total, 1500);
}

TEST(Ledger, ReplayIsDeterministic) {
  Sim sim;
  const auto chain = full_run(sim);
  const auto a = replay(chain).to_json().dump();
  EXPECT_EQ(a, replay(chain).to_json().dump());
  EXPECT_EQ(a, sim.ledger.state().to_json().dump());
  const auto text = chain_to_jsonl(chain);
  EXPECT_EQ(chain_from_jsonl(text), chain);
  EXPECT_EQ(chain_to_jsonl(chain_from_jsonl(text)), text);
}

TEST(Ledger, SingleBitTampersAreDetected) {
  Sim sim;
  const auto text = chain_to_jsonl(full_run(sim));
  ASSERT_FALSE(detected(text));
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::string bad = text;
    std::size_t pos;
    do {
      pos = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(bad.size()) - 1));
    } while (bad[pos] == '\n');  // line breaks only frame blocks
    bad[pos] = static_cast<char>(bad[pos] ^ (1 << rng.uniform_int(0, 7)));
    ASSERT_TRUE(detected(bad)) << "flip at byte " << pos;
  }
}

TEST(Ledger, ContentTamperWithRehashIsCaughtByLinkage) {
  Sim sim;
  auto chain = full_run(sim);
  chain[2].txs[0].payload.amount = 1;
  chain[2].hash = compute_hash(chain[2]);
  const auto vr = verify_chain(chain, kAuth);
  EXPECT_FALSE(vr.ok);
  EXPECT_EQ(vr.first_bad_index, 3u);
}

TEST(Ledger, ForgedEmissionFailsReplay) {
  Sim sim;
  auto chain = full_run(sim);
  // Re-seal a chain whose recorded payment differs from what the contract emits.
  for (auto& b : chain)
    for (auto& tx : b.txs)
      if (tx.kind == TxKind::CompensationPaid && tx.payload.target == "c1") tx.payload.amount = 99;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    if (i > 0) chain[i].prev_hash = chain[i - 1].hash;
    chain[i].hash = compute_hash(chain[i]);
  }
  EXPECT_TRUE(verify_chain(chain, kAuth).ok);
  EXPECT_THROW(replay(chain), ConsensusError);
}

TEST(Ledger, SealerScheduleAndTicks) {
  Sim sim;
  EXPECT_EQ(sim.ledger.scheduled_sealer(), "a2");
  EXPECT_THROW(sim.ledger.append_block({}, 1, "a3"), ConsensusError);
  sim.ledger.append_block({}, 1, "a2");
  EXPECT_THROW(sim.ledger.append_block({}, 1), ConsensusError);  // tick must advance
  auto chain = sim.ledger.chain();
  chain[1].sealer = "a3";
  chain[1].hash = compute_hash(chain[1]);
  EXPECT_FALSE(verify_chain(chain, kAuth).ok);
}

TEST(Ledger, NonceRules) {
  Sim sim;
  open_task(sim);
  auto t = sim.tx(TxKind::ModelAnnounced, "c1", {"t1", "m1", "", 0, false, "", ""});
  t.nonce += 1;
  EXPECT_THROW(sim.seal({t}), RejectedError);
  t.nonce -= 1;
  sim.seal({t});
  t.payload.ref = "m9";
  EXPECT_THROW(sim.seal({t}), RejectedError);  // replayed nonce
  const auto height = sim.ledger.height();
  const auto good = sim.tx(TxKind::ModelAnnounced, "c2", {"t1", "m2", "", 0, false, "", ""});
  try {
    sim.seal({good, t});
    FAIL() << "expected rejection";
  } catch (const RejectedError& e) {
    EXPECT_EQ(e.index(), 1u);
  }
  EXPECT_EQ(sim.ledger.height(), height);  // nothing committed
}

TEST(Ledger, ContractRejections) {
  Sim sim;
  open_task(sim);
  const auto reject = [&](Transaction t) { EXPECT_THROW(sim.seal({t}), RejectedError); };
  reject(sim.tx(TxKind::ModelAnnounced, "v1", {"t1", "m1", "", 0, false, "", ""}));  // wrong role
  reject(sim.tx(TxKind::Registered, "c1", {"t1", "", "", 10, false, "verifier", ""}));  // already registered
  reject(sim.tx(TxKind::VoteCast, "v1", {"t1", "", "nope", 0, true, "", ""}));
  reject(sim.tx(TxKind::VerdictSettled, "init", {"t1", "", "", 0, false, "", ""}));  // window open
  reject(sim.tx(TxKind::CompensationPaid, "init", {"t1", "", "init", 5, false, "", ""}));
  reject(sim.tx(TxKind::TaskPublished, "c1", {"t2", "s", "", 5000, false, "", spec().to_json().dump()}));
  reject(sim.tx(TxKind::Registered, "c1", {"zz", "", "", 10, false, "computing", ""}));
}

// Random vote injection: whatever mix of members, outsiders and repeats is
// submitted, each quorum member has at most one recorded vote per model and
// the verdict is the strict majority.
TEST(Ledger, OneVoteRuleUnderRandomInjection) {
  Rng rng(2);
  const std::vector<std::string> voters{"v1", "v2", "v3", "c1", "init", "x"};
  for (int round = 0; round < 100; ++round) {
    Sim sim;
    open_task(sim);
    sim.seal({sim.tx(TxKind::ModelAnnounced, "c1", {"t1", "m1", "", 0, false, "", ""})});
    std::map<std::string, bool> first;
    for (int k = 0; k < 12; ++k) {
      const auto& who = voters[static_cast<std::size_t>(rng.uniform_int(0, 5))];
      const bool yes = rng.bernoulli(0.5);
      const bool member = who[0] == 'v';
      const bool settled = first.size() == 3;
      auto t = sim.tx(TxKind::VoteCast, who, {"t1", "", "m1", 0, yes, "", ""});
      if (member && !first.count(who) && !settled) {
        sim.seal({t});
        first[who] = yes;
      } else {
        EXPECT_THROW(sim.seal({t}), RejectedError);
      }
    }
    const auto st = sim.ledger.state();
    const auto& mv = st.tasks.at("t1").models.at("m1");
    EXPECT_EQ(mv.votes, first);
    if (first.size() == 3) {
      int yes = 0;
      for (const auto& [_, v] : first) yes += v;
      EXPECT_EQ(*mv.verdict, yes >= 2);
    } else {
      EXPECT_FALSE(mv.verdict.has_value());
    }
    for (auto total : sim.ledger.supply_history()) ASSERT_EQ(total, 1500);
  }
}

TEST(Ledger, EventLogListsEveryTransaction) {
  Sim sim;
  const auto chain = full_run(sim);
  std::size_t n = 0;
  for (const auto& b : chain) n += b.txs.size();
  const auto log = event_log(chain);
  ASSERT_EQ(log.size(), n);
  EXPECT_EQ(log[0]["kind"], "ContractDeployed");
  EXPECT_EQ(log.back()["kind"], "VerdictSettled");
}
