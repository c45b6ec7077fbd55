#include "chainlearn/ledger.hpp"

#include <algorithm>
#include <sstream>

namespace chainlearn::ledger {

namespace {

using ojson = nlohmann::ordered_json;

[[noreturn]] void reject(const std::string& why) { throw Error(why); }

void write_tx(ByteWriter& w, const Transaction& tx) {
  w.u8(static_cast<std::uint8_t>(tx.kind));
  w.str(tx.sender);
  w.u64(tx.nonce);
  w.str(tx.payload.task_id);
  w.str(tx.payload.ref);
  w.str(tx.payload.target);
  w.i64(tx.payload.amount);
  w.u8(tx.payload.vote ? 1 : 0);
  w.str(tx.payload.role);
  w.str(tx.payload.detail);
}

void move_tokens(std::int64_t& from, std::int64_t& to, std::int64_t amount) {
  from = checked_add(from, -amount);
  to = checked_add(to, amount);
}

TaskContract& task_of(ContractState& s, const Transaction& tx) {
  auto it = s.tasks.find(tx.payload.task_id);
  if (it == s.tasks.end()) reject("unknown task '" + tx.payload.task_id + "'");
  return it->second;
}

Transaction emit(ContractState& s, TxKind kind, Payload payload) {
  Transaction tx;
  tx.kind = kind;
  tx.sender = kContractSender;
  tx.payload = std::move(payload);
  tx.nonce = ++s.nonces[kContractSender];
  return tx;
}

void pay(ContractState& s, TaskContract& task, const std::string& recipient, std::int64_t amount,
         const std::string& model, std::vector<Transaction>& events) {
  auto& pot = task.escrow[task.initiator];
  amount = std::min(amount, pot);
  if (amount <= 0) return;
  move_tokens(pot, s.paid[recipient], amount);
  events.push_back(emit(s, TxKind::CompensationPaid,
                        Payload{task.spec.task_id, model, recipient, amount, false, "", ""}));
}

std::vector<Transaction> apply(ContractState& s, const Transaction& tx, std::uint64_t tick) {
  const auto& p = tx.payload;
  if (tx.sender.empty()) reject("empty sender");
  if (tx.sender == kContractSender) reject("contract emissions cannot be submitted");
  if (p.amount < 0) reject("negative token amount");
  auto& last = s.nonces[tx.sender];
  if (tx.nonce != last + 1) {
    reject("nonce " + std::to_string(tx.nonce) + " from " + tx.sender + ", expected " + std::to_string(last + 1));
  }
  last = tx.nonce;

  std::vector<Transaction> events;
  switch (tx.kind) {
    case TxKind::ContractDeployed: {
      if (tx.sender != kGenesisSender) reject("token allocation outside genesis");
      if (p.target.empty()) reject("allocation without an account");
      s.balances[p.target] = checked_add(s.balances[p.target], p.amount);
      break;
    }
    case TxKind::TaskPublished: {
      if (p.task_id.empty()) reject("task without id");
      if (s.tasks.count(p.task_id)) reject("task '" + p.task_id + "' already published");
      if (p.ref.empty()) reject("task without a sample-set content hash");
      TaskSpec spec;
      try {
        spec = TaskSpec::from_json(nlohmann::json::parse(p.detail));
      } catch (const nlohmann::json::exception& e) {
        reject(std::string("malformed task spec: ") + e.what());
      }
      if (spec.task_id != p.task_id) reject("task spec id does not match the payload");
      auto& bal = s.balances[tx.sender];
      if (bal < p.amount) reject("insufficient balance for the task escrow");
      TaskContract task;
      task.spec = spec;
      task.initiator = tx.sender;
      task.sample_ref = p.ref;
      task.roles[tx.sender] = Role::Initiator;
      move_tokens(bal, task.escrow[tx.sender], p.amount);
      s.tasks.emplace(p.task_id, std::move(task));
      break;
    }
    case TxKind::Registered: {
      auto& task = task_of(s, tx);
      if (task.state == TaskState::Settled) reject("task already settled");
      if (tick > task.spec.window_end) reject("registration after the task window");
      if (task.roles.count(tx.sender)) reject(tx.sender + " already registered");
      Role role;
      try {
        role = role_from(p.role);
      } catch (const Error&) {
        reject("unknown role '" + p.role + "'");
      }
      if (role == Role::Initiator) reject("only the publisher is the initiator");
      if (p.amount < task.spec.deposit) reject("insufficient deposit");
      auto& bal = s.balances[tx.sender];
      if (bal < p.amount) reject("insufficient balance for the deposit");
      move_tokens(bal, task.escrow[tx.sender], p.amount);
      task.roles[tx.sender] = role;
      if (role == Role::Verifier) task.verifiers.push_back(tx.sender);
      break;
    }
    case TxKind::ModelAnnounced: {
      auto& task = task_of(s, tx);
      if (task.state == TaskState::Settled) reject("task already settled");
      auto role = task.roles.find(tx.sender);
      if (role == task.roles.end() || role->second != Role::Computing) {
        reject(tx.sender + " is not a registered computing contributor");
      }
      if (tick > task.spec.window_end) reject("announcement after the task window");
      if (p.ref.empty()) reject("announcement without a content hash");
      if (task.models.count(p.ref)) reject("model " + p.ref + " already announced");
      if (task.verifiers.empty()) reject("no registered verifiers to form a quorum");
      ModelVote mv;
      mv.contributor = tx.sender;
      mv.announced_tick = tick;
      mv.quorum = task.verifiers;
      task.models.emplace(p.ref, std::move(mv));
      task.model_order.push_back(p.ref);
      task.state = TaskState::Verifying;
      break;
    }
    case TxKind::VoteCast: {
      auto& task = task_of(s, tx);
      auto it = task.models.find(p.target);
      if (it == task.models.end()) reject("vote on unknown model " + p.target);
      auto& mv = it->second;
      if (mv.verdict) reject("vote after the verdict");
      if (std::find(mv.quorum.begin(), mv.quorum.end(), tx.sender) == mv.quorum.end()) {
        reject(tx.sender + " is not in the quorum for " + p.target);
      }
      if (mv.votes.count(tx.sender)) reject(tx.sender + " already voted on " + p.target);
      mv.votes[tx.sender] = p.vote;
      if (mv.votes.size() < mv.quorum.size()) break;

      std::int64_t yes = 0;
      for (const auto& [_, v] : mv.votes) yes += v ? 1 : 0;
      const std::int64_t no = static_cast<std::int64_t>(mv.votes.size()) - yes;
      const bool accepted = yes > no;  // ties reject
      mv.verdict = accepted;
      events.push_back(emit(s, TxKind::VerdictSettled,
                            Payload{task.spec.task_id, "", p.target, yes, accepted, "",
                                    std::to_string(yes) + " yes / " + std::to_string(no) + " no"}));
      if (accepted) pay(s, task, mv.contributor, task.spec.fee_per_model, p.target, events);
      for (const auto& [verifier, _] : mv.votes) {
        pay(s, task, verifier, task.spec.fee_per_verification, p.target, events);
      }
      break;
    }
    case TxKind::VerdictSettled: {
      auto& task = task_of(s, tx);
      if (tx.sender != task.initiator) reject("only the initiator closes a task");
      if (!p.target.empty()) reject("model verdicts are emitted by the contract");
      if (task.state == TaskState::Settled) reject("task already settled");
      if (tick <= task.spec.window_end) reject("task window still open");
      for (auto& [account, locked] : task.escrow) move_tokens(locked, s.balances[account], locked);
      task.state = TaskState::Settled;
      break;
    }
    case TxKind::CompensationPaid:
      reject("compensation is emitted by the contract");
  }
  return events;
}

ojson tx_to_json(const Transaction& tx) {
  ojson payload = {{"task_id", tx.payload.task_id}, {"ref", tx.payload.ref},   {"target", tx.payload.target},
                   {"amount", tx.payload.amount},   {"vote", tx.payload.vote}, {"role", tx.payload.role},
                   {"detail", tx.payload.detail}};
  return {{"kind", kind_name(tx.kind)}, {"sender", tx.sender}, {"nonce", tx.nonce}, {"payload", payload}};
}

Transaction tx_from_json(const ojson& j) {
  Transaction tx;
  tx.kind = kind_from(j.at("kind").get<std::string>());
  tx.sender = j.at("sender").get<std::string>();
  tx.nonce = j.at("nonce").get<std::uint64_t>();
  const auto& p = j.at("payload");
  tx.payload.task_id = p.at("task_id").get<std::string>();
  tx.payload.ref = p.at("ref").get<std::string>();
  tx.payload.target = p.at("target").get<std::string>();
  tx.payload.amount = p.at("amount").get<std::int64_t>();
  tx.payload.vote = p.at("vote").get<bool>();
  tx.payload.role = p.at("role").get<std::string>();
  tx.payload.detail = p.at("detail").get<std::string>();
  return tx;
}

ojson block_to_ojson(const Block& b) {
  ojson txs = ojson::array();
  for (const auto& tx : b.txs) txs.push_back(tx_to_json(tx));
  return {{"index", b.index},   {"timestamp", b.timestamp}, {"prev_hash", b.prev_hash},
          {"sealer", b.sealer}, {"txs", txs},               {"hash", b.hash}};
}

Block block_from_ojson(const ojson& j) {
  Block b;
  b.index = j.at("index").get<std::uint64_t>();
  b.timestamp = j.at("timestamp").get<std::uint64_t>();
  b.prev_hash = j.at("prev_hash").get<std::string>();
  b.sealer = j.at("sealer").get<std::string>();
  for (const auto& t : j.at("txs")) b.txs.push_back(tx_from_json(t));
  b.hash = j.at("hash").get<std::string>();
  return b;
}

}  // namespace

std::string kind_name(TxKind k) {
  switch (k) {
    case TxKind::ContractDeployed: return "ContractDeployed";
    case TxKind::TaskPublished: return "TaskPublished";
    case TxKind::Registered: return "Registered";
    case TxKind::ModelAnnounced: return "ModelAnnounced";
    case TxKind::VoteCast: return "VoteCast";
    case TxKind::VerdictSettled: return "VerdictSettled";
    case TxKind::CompensationPaid: return "CompensationPaid";
  }
  return "?";
}

TxKind kind_from(const std::string& s) {
  for (auto k : {TxKind::ContractDeployed, TxKind::TaskPublished, TxKind::Registered, TxKind::ModelAnnounced,
                 TxKind::VoteCast, TxKind::VerdictSettled, TxKind::CompensationPaid}) {
    if (kind_name(k) == s) return k;
  }
  throw FormatError("unknown transaction kind '" + s + "'");
}

std::string role_name(Role r) {
  switch (r) {
    case Role::Initiator: return "initiator";
    case Role::Computing: return "computing";
    case Role::Verifier: return "verifier";
  }
  return "?";
}

Role role_from(const std::string& s) {
  if (s == "initiator") return Role::Initiator;
  if (s == "computing") return Role::Computing;
  if (s == "verifier") return Role::Verifier;
  throw FormatError("unknown role '" + s + "'");
}

std::string state_name(TaskState s) {
  switch (s) {
    case TaskState::Open: return "open";
    case TaskState::Verifying: return "verifying";
    case TaskState::Settled: return "settled";
  }
  return "?";
}

Bytes canonical_bytes(const Transaction& tx) {
  ByteWriter w;
  write_tx(w, tx);
  return w.take();
}

Bytes canonical_bytes(const Block& block) {
  ByteWriter w;
  w.raw(as_bytes("CLBLOCK1"));
  w.u64(block.index);
  w.u64(block.timestamp);
  w.str(block.prev_hash);
  w.str(block.sealer);
  w.u32(static_cast<std::uint32_t>(block.txs.size()));
  for (const auto& tx : block.txs) {
    const Bytes b = canonical_bytes(tx);
    w.u32(static_cast<std::uint32_t>(b.size()));
    w.raw(b);
  }
  return w.take();
}

std::string compute_hash(const Block& block) { return sha256_hex(canonical_bytes(block)); }

nlohmann::json TaskSpec::to_json() const {
  return {{"task_id", task_id},
          {"num_classes", num_classes},
          {"accuracy_threshold", accuracy_threshold},
          {"fusion_strategy", fusion_strategy},
          {"window_end", window_end},
          {"deposit", deposit},
          {"fee_per_model", fee_per_model},
          {"fee_per_verification", fee_per_verification}};
}

TaskSpec TaskSpec::from_json(const nlohmann::json& j) {
  TaskSpec s;
  s.task_id = j.at("task_id").get<std::string>();
  s.num_classes = j.at("num_classes").get<int>();
  s.accuracy_threshold = j.at("accuracy_threshold").get<double>();
  s.fusion_strategy = j.at("fusion_strategy").get<std::string>();
  s.window_end = j.at("window_end").get<std::uint64_t>();
  s.deposit = j.at("deposit").get<std::int64_t>();
  s.fee_per_model = j.at("fee_per_model").get<std::int64_t>();
  s.fee_per_verification = j.at("fee_per_verification").get<std::int64_t>();
  if (s.deposit < 0 || s.fee_per_model < 0 || s.fee_per_verification < 0) {
    throw ParameterError("task spec: token amounts must be >= 0");
  }
  return s;
}

std::int64_t ContractState::total_tokens() const {
  std::int64_t total = 0;
  for (const auto& [_, v] : balances) total = checked_add(total, v);
  for (const auto& [_, v] : paid) total = checked_add(total, v);
  for (const auto& [_, task] : tasks) {
    for (const auto& [__, v] : task.escrow) total = checked_add(total, v);
  }
  return total;
}

nlohmann::json ContractState::to_json() const {
  nlohmann::json tasks_j = nlohmann::json::object();
  for (const auto& [id, t] : tasks) {
    nlohmann::json models = nlohmann::json::array();
    for (const auto& ref : t.model_order) {
      const auto& mv = t.models.at(ref);
      nlohmann::json votes = nlohmann::json::object();
      for (const auto& [v, yes] : mv.votes) votes[v] = yes;
      models.push_back({{"ref", ref},
                        {"contributor", mv.contributor},
                        {"quorum", mv.quorum},
                        {"votes", votes},
                        {"verdict", mv.verdict ? nlohmann::json(*mv.verdict) : nlohmann::json(nullptr)}});
    }
    tasks_j[id] = {{"initiator", t.initiator}, {"state", state_name(t.state)}, {"escrow", t.escrow},
                   {"models", models}};
  }
  return {{"balances", balances}, {"paid", paid}, {"tasks", tasks_j}, {"total_tokens", total_tokens()}};
}

std::vector<Transaction> contract_step(ContractState& state, const Transaction& tx, std::uint64_t tick) {
  ContractState next = state;
  auto events = apply(next, tx, tick);
  state = std::move(next);
  return events;
}

VerifyResult verify_chain(const std::vector<Block>& chain, const std::vector<std::string>& authorities) {
  const auto bad = [](std::size_t i, std::string why) { return VerifyResult{false, i, std::move(why)}; };
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const Block& b = chain[i];
    if (b.index != i) return bad(i, "index out of sequence");
    if (compute_hash(b) != b.hash) return bad(i, "hash does not match contents");
    if (i == 0) {
      if (b.prev_hash != kZeroHash) return bad(i, "genesis prev_hash is not zero");
    } else {
      if (b.prev_hash != chain[i - 1].hash) return bad(i, "prev_hash does not link to the previous block");
      if (b.timestamp < chain[i - 1].timestamp) return bad(i, "timestamp goes backwards");
    }
    if (!authorities.empty() && b.sealer != authorities[i % authorities.size()]) {
      return bad(i, "sealed out of turn");
    }
  }
  return {};
}

ContractState replay(const std::vector<Block>& chain) {
  ContractState state;
  for (const auto& b : chain) {
    std::size_t i = 0;
    while (i < b.txs.size()) {
      const auto& tx = b.txs[i];
      if (tx.sender == kContractSender) {
        throw ConsensusError("block " + std::to_string(b.index) + ": contract emission without a trigger");
      }
      std::vector<Transaction> events;
      try {
        events = contract_step(state, tx, b.timestamp);
      } catch (const Error& e) {
        throw ConsensusError("block " + std::to_string(b.index) + ": replay rejected a committed transaction: " +
                             e.what());
      }
      for (std::size_t k = 0; k < events.size(); ++k) {
        if (i + 1 + k >= b.txs.size() || !(b.txs[i + 1 + k] == events[k])) {
          throw ConsensusError("block " + std::to_string(b.index) + ": recorded contract emissions diverge");
        }
      }
      i += 1 + events.size();
    }
  }
  return state;
}

nlohmann::json to_json(const Block& b) { return nlohmann::json::parse(block_to_ojson(b).dump()); }

Block block_from_json(const nlohmann::json& j) { return block_from_ojson(ojson::parse(j.dump())); }

std::string chain_to_jsonl(const std::vector<Block>& chain) {
  std::string out;
  for (const auto& b : chain) {
    out += block_to_ojson(b).dump();
    out += '\n';
  }
  return out;
}

std::vector<Block> chain_from_jsonl(const std::string& text) {
  std::vector<Block> chain;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      chain.push_back(block_from_ojson(ojson::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("chain line " + std::to_string(n) + ": " + e.what());
    }
  }
  return chain;
}

nlohmann::json event_log(const std::vector<Block>& chain) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : chain) {
    for (const auto& tx : b.txs) {
      auto j = nlohmann::json::parse(tx_to_json(tx).dump());
      j["block"] = b.index;
      j["tick"] = b.timestamp;
      out.push_back(std::move(j));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Ledger::Ledger(std::vector<std::string> authorities, const std::vector<Allocation>& genesis,
               std::uint64_t block_interval_ticks)
    : authorities_(std::move(authorities)), interval_(block_interval_ticks) {
  if (authorities_.empty()) throw ParameterError("ledger needs at least one authority");
  if (interval_ == 0) throw ParameterError("block interval must be >= 1 tick");
  Block g;
  g.index = 0;
  g.timestamp = 0;
  g.prev_hash = kZeroHash;
  g.sealer = authorities_[0];
  std::uint64_t nonce = 0;
  for (const auto& a : genesis) {
    Transaction tx{TxKind::ContractDeployed, kGenesisSender, Payload{"", "", a.account, a.amount, false, "", ""},
                   ++nonce};
    contract_step(state_, tx, 0);
    g.txs.push_back(tx);
  }
  g.hash = compute_hash(g);
  chain_.push_back(std::move(g));
  supply_.push_back(state_.total_tokens());
}

std::string Ledger::scheduled_sealer() const {
  std::lock_guard lock(mu_);
  return authorities_[chain_.size() % authorities_.size()];
}

std::uint64_t Ledger::next_nonce(const std::string& sender) const {
  std::lock_guard lock(mu_);
  auto it = state_.nonces.find(sender);
  return it == state_.nonces.end() ? 1 : it->second + 1;
}

Block Ledger::append_block(const std::vector<Transaction>& txs, std::uint64_t tick) {
  return append_block(txs, tick, scheduled_sealer());
}

Block Ledger::append_block(const std::vector<Transaction>& txs, std::uint64_t tick, const std::string& sealer) {
  std::lock_guard lock(mu_);
  const std::string& turn = authorities_[chain_.size() % authorities_.size()];
  if (sealer != turn) throw ConsensusError("block " + std::to_string(chain_.size()) + " is " + turn + "'s turn, not " + sealer + "'s");
  if (tick < chain_.back().timestamp + interval_) {
    throw ConsensusError("block tick " + std::to_string(tick) + " is closer than one block interval to the previous block");
  }
  ContractState next = state_;
  Block b;
  b.index = chain_.size();
  b.timestamp = tick;
  b.prev_hash = chain_.back().hash;
  b.sealer = sealer;
  for (std::size_t i = 0; i < txs.size(); ++i) {
    if (txs[i].sender == kGenesisSender || txs[i].sender == kContractSender) {
      throw RejectedError(i, "reserved sender '" + txs[i].sender + "'");
    }
    std::vector<Transaction> events;
    try {
      events = contract_step(next, txs[i], tick);
    } catch (const RejectedError&) {
      throw;
    } catch (const Error& e) {
      throw RejectedError(i, e.what());
    }
    b.txs.push_back(txs[i]);
    b.txs.insert(b.txs.end(), events.begin(), events.end());
  }
  b.hash = compute_hash(b);
  chain_.push_back(b);
  state_ = std::move(next);
  supply_.push_back(state_.total_tokens());
  return b;
}

std::vector<Block> Ledger::chain() const {
  std::lock_guard lock(mu_);
  return chain_;
}

ContractState Ledger::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

std::size_t Ledger::height() const {
  std::lock_guard lock(mu_);
  return chain_.size();
}

std::vector<std::int64_t> Ledger::supply_history() const {
  std::lock_guard lock(mu_);
  return supply_;
}

}  // namespace chainlearn::ledger
