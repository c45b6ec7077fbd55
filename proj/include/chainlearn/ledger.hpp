#pragma once

// Simulated permissioned ledger: hash-chained blocks sealed round-robin by a
// fixed authority set, and the task contract that escrows tokens, collects
// votes on announced models and pays compensation.
//
// Contract-emitted transactions (verdicts, payments) are recorded in the same
// block right after the transaction that triggered them, so the chain alone
// replays to the final contract state.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "chainlearn/common.hpp"

#include <json.hpp>

namespace chainlearn::ledger {

enum class TxKind : std::uint8_t {
  ContractDeployed = 1,  // genesis token allocation
  TaskPublished = 2,
  Registered = 3,
  ModelAnnounced = 4,
  VoteCast = 5,
  VerdictSettled = 6,    // contract-emitted per model; initiator-sent with empty target closes the task
  CompensationPaid = 7,  // contract-emitted
};

std::string kind_name(TxKind k);
TxKind kind_from(const std::string& s);

enum class Role { Initiator, Computing, Verifier };
std::string role_name(Role r);
Role role_from(const std::string& s);

inline const std::string kContractSender = "contract";
inline const std::string kGenesisSender = "genesis";

struct Payload {
  std::string task_id;
  std::string ref;     // castore content hash (sample set, encrypted model)
  std::string target;  // model ref for votes/verdicts, recipient for payments/allocations
  std::int64_t amount = 0;
  bool vote = false;
  std::string role;
  std::string detail;  // task spec (canonical JSON) or free-form note

  bool operator==(const Payload&) const = default;
};

struct Transaction {
  TxKind kind = TxKind::ContractDeployed;
  std::string sender;
  Payload payload;
  std::uint64_t nonce = 0;

  bool operator==(const Transaction&) const = default;
};

struct Block {
  std::uint64_t index = 0;
  std::uint64_t timestamp = 0;  // simulation tick
  std::string prev_hash;
  std::string sealer;
  std::vector<Transaction> txs;
  std::string hash;

  bool operator==(const Block&) const = default;
};

// Canonical byte forms (fixed field order, length-prefixed strings).
Bytes canonical_bytes(const Transaction& tx);
Bytes canonical_bytes(const Block& block);  // every field except `hash`
std::string compute_hash(const Block& block);

inline const std::string kZeroHash(64, '0');

// ---------------------------------------------------------------------------
// Contract
// ---------------------------------------------------------------------------

struct TaskSpec {
  std::string task_id;
  int num_classes = 10;
  double accuracy_threshold = 0.9;
  std::string fusion_strategy = "II";
  std::uint64_t window_end = 0;  // last tick at which announcements are accepted
  std::int64_t deposit = 10;     // minimum participant deposit
  std::int64_t fee_per_model = 100;
  std::int64_t fee_per_verification = 5;

  nlohmann::json to_json() const;
  static TaskSpec from_json(const nlohmann::json& j);
};

enum class TaskState { Open, Verifying, Settled };
std::string state_name(TaskState s);

struct ModelVote {
  std::string contributor;
  std::uint64_t announced_tick = 0;
  std::vector<std::string> quorum;  // verifiers registered at announcement
  std::map<std::string, bool> votes;
  std::optional<bool> verdict;
};

struct TaskContract {
  TaskSpec spec;
  std::string initiator;
  std::string sample_ref;
  TaskState state = TaskState::Open;
  std::map<std::string, Role> roles;
  std::vector<std::string> verifiers;  // registration order
  std::map<std::string, std::int64_t> escrow;
  std::map<std::string, ModelVote> models;
  std::vector<std::string> model_order;
};

struct ContractState {
  std::map<std::string, std::int64_t> balances;  // free tokens
  std::map<std::string, std::int64_t> paid;      // compensation received
  std::map<std::string, TaskContract> tasks;
  std::map<std::string, std::uint64_t> nonces;   // last nonce per sender

  // balances + escrow + paid over every account.
  std::int64_t total_tokens() const;
  nlohmann::json to_json() const;
};

class RejectedError : public Error {
 public:
  RejectedError(std::size_t index, const std::string& what)
      : Error("transaction " + std::to_string(index) + " rejected: " + what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

// Applies one transaction. Returns the contract-emitted follow-ups. Throws
// Error (with the reason) when the transaction is not admissible; `state` is
// left untouched in that case.
std::vector<Transaction> contract_step(ContractState& state, const Transaction& tx, std::uint64_t tick);

// ---------------------------------------------------------------------------
// Chain
// ---------------------------------------------------------------------------

struct VerifyResult {
  bool ok = true;
  std::size_t first_bad_index = 0;
  std::string reason;
};

// Hashes, linkage, indices and the sealer schedule.
VerifyResult verify_chain(const std::vector<Block>& chain, const std::vector<std::string>& authorities);

// Re-executes every sender transaction from genesis and checks that the
// recorded contract emissions match. Throws ConsensusError on divergence.
ContractState replay(const std::vector<Block>& chain);

std::string chain_to_jsonl(const std::vector<Block>& chain);
std::vector<Block> chain_from_jsonl(const std::string& text);
nlohmann::json to_json(const Block& b);
Block block_from_json(const nlohmann::json& j);

// Every transaction with its block index and tick, in chain order.
nlohmann::json event_log(const std::vector<Block>& chain);

struct Allocation {
  std::string account;
  std::int64_t amount = 0;
};

// Single serialized writer. Reads of committed state are safe from any thread.
class Ledger {
 public:
  Ledger(std::vector<std::string> authorities, const std::vector<Allocation>& genesis,
         std::uint64_t block_interval_ticks = 1);

  // Seals a block at `tick` by `sealer`. ConsensusError if it is not the
  // sealer's turn or the tick goes backwards; RejectedError naming the first
  // invalid transaction (nothing is committed then).
  Block append_block(const std::vector<Transaction>& txs, std::uint64_t tick, const std::string& sealer);

  // Convenience: seal with whichever authority is scheduled.
  Block append_block(const std::vector<Transaction>& txs, std::uint64_t tick);

  std::string scheduled_sealer() const;
  std::uint64_t next_nonce(const std::string& sender) const;

  std::vector<Block> chain() const;
  ContractState state() const;
  std::size_t height() const;
  std::uint64_t block_interval() const { return interval_; }
  const std::vector<std::string>& authorities() const { return authorities_; }

  // Token totals after each committed block (conservation audit trail).
  std::vector<std::int64_t> supply_history() const;

 private:
  std::vector<std::string> authorities_;
  std::uint64_t interval_;
  mutable std::mutex mu_;
  std::vector<Block> chain_;
  ContractState state_;
  std::vector<std::int64_t> supply_;
};

}  // namespace chainlearn::ledger
