#include "chainlearn/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "chainlearn/datasets.hpp"

namespace chainlearn::protocol {

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// SimNetwork
// ---------------------------------------------------------------------------

SimNetwork::SimNetwork(std::uint64_t seed, std::uint64_t delay_min, std::uint64_t delay_max, double drop_probability)
    : rng_(seed), dmin_(delay_min), dmax_(delay_max), drop_(drop_probability) {
  if (dmin_ > dmax_) throw ParameterError("network: delay_min exceeds delay_max");
  if (!(drop_ >= 0.0 && drop_ < 1.0)) throw ParameterError("network: drop probability must be in [0, 1)");
}

void SimNetwork::send(Message m, std::uint64_t now) {
  ++stats_.sent;
  stats_.bytes += m.body.size();
  m.seq = next_seq_++;
  m.sent_tick = now;
  // Both draws happen for every message so the delay stream does not depend
  // on which messages were dropped.
  const bool dropped = rng_.uniform01() < drop_;
  const auto delay = static_cast<std::uint64_t>(
      rng_.uniform_int(static_cast<std::int64_t>(dmin_), static_cast<std::int64_t>(dmax_)));
  if (dropped) {
    ++stats_.dropped;
    return;
  }
  auto& last = last_delivery_[{m.from, m.to}];
  m.deliver_tick = std::max(now + delay, last);
  last = m.deliver_tick;
  queue_.push(std::move(m));
}

std::vector<Message> SimNetwork::deliver(std::uint64_t tick) {
  std::vector<Message> out;
  while (!queue_.empty() && queue_.top().deliver_tick <= tick) {
    out.push_back(queue_.top());
    queue_.pop();
  }
  stats_.delivered += out.size();
  return out;
}

// ---------------------------------------------------------------------------
// KeyVault
// ---------------------------------------------------------------------------

const ivhe::SecretKey& KeyVault::secret(const std::string& caller) {
  log_.push_back(caller);
  if (poisoned_ && caller != owner_) throw PrivacyError("secret key read by '" + caller + "'");
  return key_;
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

fusion::FeatureSet lane_feature_set(const cipher::EncryptedModel& em, const nn::LabeledDataset& data) {
  fusion::FeatureSet fs;
  for (const auto& ex : data.examples) {
    auto f = cipher::normalized_lane_features(cipher::feature_lanes(em, ex.input));
    if (fs.dim == 0) {
      fs.dim = f.size();
      fs.x.reserve(fs.dim * data.size());
    }
    fs.push(f, ex.label);
  }
  return fs;
}

namespace {

// Columns of several per-model feature sets, restricted to `rows`.
fusion::FeatureSet concat_columns(const std::vector<const fusion::FeatureSet*>& parts,
                                  const std::vector<std::size_t>& rows) {
  fusion::FeatureSet out;
  for (const auto* p : parts) out.dim += p->dim;
  out.x.reserve(out.dim * rows.size());
  std::vector<double> row;
  for (auto r : rows) {
    row.clear();
    for (const auto* p : parts) {
      auto v = p->row(r);
      row.insert(row.end(), v.begin(), v.end());
    }
    out.push(row, parts.front()->labels[r]);
  }
  return out;
}

std::uint64_t ref_salt(const std::string& ref) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 16 && i < ref.size(); ++i) {
    const char c = ref[i];
    v = v * 16 + static_cast<std::uint64_t>(c >= 'a' ? c - 'a' + 10 : c - '0');
  }
  return v;
}

}  // namespace

Verdict verify_candidate(const VerificationJob& job, const ivhe::SwitchKey& key, const castore::Store& store,
                         FeatureCache* cache) {
  Verdict v;
  const auto no = [&](std::string why) {
    v.vote = false;
    v.diagnostic = std::move(why);
    return v;
  };

  nn::LabeledDataset sample;
  try {
    sample = data::deserialize_dataset(store.get(job.sample_ref));
  } catch (const Error& e) {
    return no(std::string("sample set unavailable: ") + e.what());
  }
  std::vector<std::size_t> train_rows, hold_rows;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto s = sample.splits.empty() ? nn::Split::Train : sample.splits[i];
    (s == nn::Split::Verify ? hold_rows : train_rows).push_back(i);
  }
  if (train_rows.empty() || hold_rows.empty()) return no("sample set lacks a train or holdout split");
  const std::string key_id = key.id();

  FeatureCache local;
  FeatureCache& memo = cache != nullptr ? *cache : local;
  const auto features = [&](const std::string& ref) -> const fusion::FeatureSet& {
    if (auto it = memo.find(ref); it != memo.end()) return it->second;
    const auto em = cipher::deserialize_encrypted_model(store.get(ref));
    if (em.key_id != key_id) throw IncompatibleError("encrypted under a different key");
    if (!(em.plain.input == sample.shape)) throw ShapeError("model input shape does not match the sample set");
    return memo.emplace(ref, lane_feature_set(em, sample)).first->second;
  };

  std::vector<const fusion::FeatureSet*> accepted;
  try {
    for (const auto& ref : job.accepted_refs) accepted.push_back(&features(ref));
  } catch (const Error& e) {
    return no(std::string("accepted model unusable: ") + e.what());
  }
  const fusion::FeatureSet* candidate = nullptr;
  try {
    candidate = &features(job.candidate_ref);
  } catch (const Error& e) {
    return no(std::string("malformed candidate: ") + e.what());
  }
  for (std::size_t i = 0; i < accepted.size(); ++i) {
    if (accepted[i]->dim == candidate->dim && accepted[i]->x == candidate->x) {
      return no("candidate duplicates accepted model " + job.accepted_refs[i]);
    }
  }

  const std::size_t d = static_cast<std::size_t>(sample.num_classes);
  const auto score = [&](const std::vector<const fusion::FeatureSet*>& parts) {
    std::vector<std::size_t> lengths;
    for (const auto* p : parts) lengths.push_back(p->dim);
    auto head = fusion::init_strategy1(lengths, d, job.seed);
    nn::TrainConfig tc;
    tc.optimizer = nn::OptimizerKind::Adam;
    tc.learning_rate = job.cfg.learning_rate;
    tc.batch_size = job.cfg.batch_size;
    tc.seed = Rng::derive(job.seed, 2);
    fusion::train_head(head, concat_columns(parts, train_rows), tc, job.cfg.epochs);
    return fusion::head_accuracy(head, concat_columns(parts, hold_rows));
  };

  v.baseline_accuracy = accepted.empty() ? 1.0 / static_cast<double>(d) : score(accepted);
  auto with = accepted;
  with.push_back(candidate);
  v.fused_accuracy = score(with);
  v.vote = v.fused_accuracy > v.baseline_accuracy + job.cfg.margin;
  if (!v.vote) v.diagnostic = "no accuracy gain";
  return v;
}

// ---------------------------------------------------------------------------
// Settlement
// ---------------------------------------------------------------------------

fusion::MetaModel fuse_models(std::span<const nn::LayeredModel> models, const nn::LabeledDataset& data,
                              fusion::Strategy strategy, const nn::TrainConfig& cfg, std::size_t stage0,
                              std::size_t stage1) {
  if (strategy == fusion::Strategy::I) {
    nn::TrainConfig c = cfg;
    c.max_epochs = stage0 + stage1;
    return fusion::fuse_strategy1(models, data, c);
  }
  return fusion::fuse_strategy2(models, data, cfg, stage0, stage1);
}

Settlement settle_and_fuse(const SettleInputs& in) {
  if (in.accepted_refs.empty()) throw ParameterError("settlement needs at least one accepted model");
  if (in.store == nullptr || in.secret == nullptr) throw ParameterError("settlement needs the store and the secret key");
  Settlement out;
  std::vector<nn::LayeredModel> models;
  for (const auto& ref : in.accepted_refs) {
    const Bytes blob = in.store->get(ref);  // IntegrityError on digest mismatch
    const auto em = cipher::deserialize_encrypted_model(blob);
    out.decrypted.push_back(cipher::decrypt_model(em, *in.secret));
    models.push_back(cipher::dequantize(out.decrypted.back()));
  }
  out.meta = fuse_models(models, in.fusion_data, in.strategy, in.head_cfg, in.stage0_epochs, in.stage1_epochs);
  out.meta.model_refs = in.accepted_refs;
  return out;
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

namespace {

// Seed salts; each stream is independent of the others.
enum Salt : std::uint64_t {
  kPool = 1,
  kTest = 2,
  kPartition = 3,
  kNetwork = 4,
  kKeygen = 5,
  kVerifierPick = 6,
  kTrain = 7,
  kInit = 8,
  kVerify = 9,
  kFusion = 10,
  kFedAvg = 11,
};

const std::string kTaskId = "task-1";

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

struct Timings {
  double train_ms = 0, encrypt_ms = 0, verify_ms = 0, fuse_ms = 0;
};

struct World;

class Actor {
 public:
  explicit Actor(std::string id) : id_(std::move(id)) {}
  virtual ~Actor() = default;
  virtual void handle(const Message& m, World& w) = 0;
  virtual void act(World& w) = 0;
  const std::string& id() const { return id_; }
  bool alive = true;

 protected:
  std::string id_;
};

struct World {
  const config::ScenarioConfig& cfg;
  const RunHooks& hooks;
  std::unique_ptr<castore::Store> owned_store;
  castore::Store& store;
  ledger::Ledger ledger;
  SimNetwork net;
  std::uint64_t tick = 0;
  std::vector<ledger::Transaction> mempool;
  ojson rejected = ojson::array();
  std::vector<VoteRecord> votes;
  Timings timings;
  std::uint64_t comm_model_bytes = 0;  // encrypted-model bytes moved between nodes

  World(const config::ScenarioConfig& c, const RunHooks& h, std::vector<std::string> authorities,
        const std::vector<ledger::Allocation>& genesis)
      : cfg(c),
        hooks(h),
        owned_store(h.store_root ? std::make_unique<castore::Store>(*h.store_root) : std::make_unique<castore::Store>()),
        store(*owned_store),
        ledger(std::move(authorities), genesis, c.block_interval),
        net(Rng::derive(c.seed, kNetwork), c.delay_min, c.delay_max, c.drop_probability) {}

  void submit(ledger::Transaction tx) {
    std::uint64_t pending = 0;
    for (const auto& t : mempool) pending += t.sender == tx.sender ? 1 : 0;
    tx.nonce = ledger.next_nonce(tx.sender) + pending;
    mempool.push_back(std::move(tx));
  }

  void send(const std::string& from, const std::string& to, const std::string& kind, const std::string& body) {
    Message m;
    m.from = from;
    m.to = to;
    m.kind = kind;
    m.body = body;
    net.send(std::move(m), tick);
  }

  // Seals the mempool, dropping rejected transactions (and renumbering the
  // sender's later nonces) until the block commits.
  void seal() {
    if (mempool.empty()) return;
    const std::uint64_t tail_tick = ledger.chain().back().timestamp;
    if (tick < tail_tick + ledger.block_interval()) return;
    while (!mempool.empty()) {
      try {
        ledger.append_block(mempool, tick);
        mempool.clear();
        return;
      } catch (const ledger::RejectedError& e) {
        const auto bad = mempool[e.index()];
        rejected.push_back({{"tick", tick}, {"sender", bad.sender}, {"kind", ledger::kind_name(bad.kind)},
                            {"reason", e.what()}});
        mempool.erase(mempool.begin() + static_cast<std::ptrdiff_t>(e.index()));
        for (std::size_t i = e.index(); i < mempool.size(); ++i) {
          if (mempool[i].sender == bad.sender) --mempool[i].nonce;
        }
      }
    }
  }

  const ledger::TaskContract* task(const ledger::ContractState& s) const {
    auto it = s.tasks.find(kTaskId);
    return it == s.tasks.end() ? nullptr : &it->second;
  }
};

ivhe::SwitchKey decode_key(const std::string& body) { return ivhe::deserialize_switch_key(base64_decode(body)); }

// ---------------------------------------------------------------------------

class Initiator : public Actor {
 public:
  Initiator(const config::ScenarioConfig& cfg, nn::LabeledDataset sample, std::vector<std::string> contributors,
            std::vector<std::string> verifier_pool)
      : Actor("initiator"),
        sample_(std::move(sample)),
        contributors_(std::move(contributors)),
        pool_(std::move(verifier_pool)) {
    const auto arch = config::build_arch(cfg.arch, cfg.input_shape(), cfg.num_classes());
    ivhe::HEParams hp;
    hp.w = cfg.he_w;
    hp.l = cfg.he_l;
    hp.a_bound = cfg.he_a_bound;
    hp.e_bound = cfg.he_e_bound;
    hp.t_bound = cfg.he_t_bound;
    hp.non_negative = cfg.he_non_negative;
    if (cipher::strategy_from(cfg.strategy) == cipher::Strategy::MatrixPair) {
      const auto* conv = std::get_if<nn::Conv2d>(&arch.layers.front());
      if (conv == nullptr) throw ConfigError("he.strategy matrix-pair needs a model that starts with a convolution");
      hp.n = conv->out_c;
      hp.uniform_secret = true;
    }
    auto km = ivhe::gen_keys(hp, Rng::derive(cfg.seed, kKeygen));
    switch_key_ = std::move(km.switch_key);
    vault_ = std::make_unique<KeyVault>(id_, std::move(km.secret));
  }

  void handle(const Message&, World&) override {}

  void act(World& w) override {
    if (!published_) {
      publish(w);
      return;
    }
    const auto state = w.ledger.state();
    const auto* task = w.task(state);
    if (task == nullptr) return;
    if (!close_submitted_ && w.tick > task->spec.window_end) {
      w.submit({ledger::TxKind::VerdictSettled, id_, ledger::Payload{kTaskId, "", "", 0, false, "", "close"}, 0});
      close_submitted_ = true;
      return;
    }
    if (close_submitted_ && task->state == ledger::TaskState::Settled && !done) {
      settled_tick = w.tick;
      for (const auto& ref : task->model_order) {
        const auto& mv = task->models.at(ref);
        if (mv.verdict && *mv.verdict) accepted.push_back(ref);
      }
      done = true;
    }
  }

  KeyVault& vault() { return *vault_; }
  const ivhe::SwitchKey& switch_key() const { return switch_key_; }
  const nn::LabeledDataset& sample() const { return sample_; }

  bool done = false;
  std::uint64_t published_tick = 0, settled_tick = 0;
  std::string sample_ref;
  std::vector<std::string> selected_verifiers;
  std::vector<std::string> accepted;

 private:
  void publish(World& w) {
    sample_ref = w.store.put(data::serialize(sample_), castore::MediaTag::Dataset).digest;
    ledger::TaskSpec spec;
    spec.task_id = kTaskId;
    spec.num_classes = w.cfg.num_classes();
    spec.accuracy_threshold = w.cfg.stop_accuracy;
    spec.fusion_strategy = w.cfg.fusion_strategy;
    spec.window_end = w.tick + w.cfg.window_ticks;
    spec.deposit = w.cfg.deposit;
    spec.fee_per_model = w.cfg.fee_per_model;
    spec.fee_per_verification = w.cfg.fee_per_verification;
    w.submit({ledger::TxKind::TaskPublished, id_,
              ledger::Payload{kTaskId, sample_ref, "", w.cfg.task_escrow, false, "", spec.to_json().dump()}, 0});

    const std::string key_body = base64_encode(ivhe::serialize(switch_key_));
    for (const auto& c : contributors_) w.send(id_, c, "public-key", key_body);
    auto picks = pool_;
    Rng rng(Rng::derive(w.cfg.seed, kVerifierPick));
    rng.shuffle(picks);
    picks.resize(w.cfg.verifiers);
    selected_verifiers = picks;
    for (const auto& v : picks) {
      w.send(id_, v, "public-key", key_body);
      w.send(id_, v, "invite", kTaskId);
    }
    published_ = true;
    published_tick = w.tick;
  }

  nn::LabeledDataset sample_;
  std::vector<std::string> contributors_, pool_;
  ivhe::SwitchKey switch_key_;
  std::unique_ptr<KeyVault> vault_;
  bool published_ = false;
  bool close_submitted_ = false;
};

// ---------------------------------------------------------------------------

class Computing : public Actor {
 public:
  Computing(std::string id, nn::LabeledDataset share, nn::LayeredModel arch, ContributorRecord* record)
      : Actor(std::move(id)), share_(std::move(share)), arch_(std::move(arch)), record_(record) {}

  void handle(const Message& m, World&) override {
    if (m.kind == "public-key") key_ = decode_key(m.body);
  }

  void act(World& w) override {
    if (!key_ || stage_ == Stage::Done) return;
    const auto state = w.ledger.state();
    const auto* task = w.task(state);
    if (task == nullptr || task->state == ledger::TaskState::Settled) return;
    switch (stage_) {
      case Stage::Idle:
        if (w.tick > task->spec.window_end) return;
        w.submit({ledger::TxKind::Registered, id_,
                  ledger::Payload{kTaskId, "", "", w.cfg.deposit, false, "computing", ""}, 0});
        stage_ = Stage::Registering;
        break;
      case Stage::Registering:
        if (!task->roles.count(id_)) return;
        train(w);
        ready_tick_ = w.tick + w.cfg.train_ticks;
        stage_ = Stage::Training;
        break;
      case Stage::Training: {
        if (w.tick < ready_tick_) return;
        // Wait for the full quorum unless the window is about to close.
        const bool quorum_full = task->verifiers.size() >= w.cfg.verifiers;
        const bool late = w.tick + w.cfg.verify_ticks + 2 * w.cfg.delay_max >= task->spec.window_end;
        if (task->verifiers.empty() || (!quorum_full && !late)) return;
        if (w.tick > task->spec.window_end) {
          stage_ = Stage::Done;
          return;
        }
        announce(w);
        stage_ = Stage::Done;
        break;
      }
      case Stage::Done:
        break;
    }
  }

  const nn::LayeredModel& model() const { return model_; }

 private:
  enum class Stage { Idle, Registering, Training, Done };

  void train(World& w) {
    const auto t0 = Clock::now();
    nn::LayeredModel init = arch_;
    nn::init_weights(init, Rng::derive(seed_, kInit));
    nn::TrainConfig tc;
    tc.optimizer = w.cfg.optimizer == "sgd" ? nn::OptimizerKind::Sgd : nn::OptimizerKind::Adam;
    tc.learning_rate = w.cfg.learning_rate;
    tc.batch_size = w.cfg.batch_size;
    tc.max_epochs = w.cfg.max_epochs;
    tc.stop_accuracy = w.cfg.stop_accuracy;
    tc.seed = Rng::derive(seed_, kTrain);
    auto result = nn::train(std::move(init), share_, tc);
    model_ = std::move(result.model);
    record_->epochs = result.history.size();
    const auto verify = share_.subset(nn::Split::Verify);
    record_->local_accuracy = nn::evaluate(model_, verify.size() ? verify : share_.subset(nn::Split::Train));
    record_->reached_threshold = record_->local_accuracy >= w.cfg.stop_accuracy;
    w.timings.train_ms += ms_since(t0);
  }

  void announce(World& w) {
    const auto t0 = Clock::now();
    const auto sm = cipher::quantize(model_, w.cfg.p, w.cfg.q, 1 << 12,
                                     cipher::SigmoidApprox{3, w.cfg.sigmoid_divisor});
    cipher::EncryptOptions opts;
    opts.noise = w.cfg.noise_policy == "exact" ? cipher::NoisePolicy::Exact : cipher::NoisePolicy::Report;
    double max_abs = 1.0;
    for (const auto& ex : share_.examples)
      for (double x : ex.input) max_abs = std::max(max_abs, std::abs(x));
    opts.max_abs_input = max_abs == 1.0 ? 1.0 : 2.0 * max_abs;
    opts.approximate_sigmoid = w.cfg.approximate_sigmoid;
    const auto em = cipher::strategy_from(w.cfg.strategy) == cipher::Strategy::MatrixPair
                        ? cipher::encrypt_matrixpair(sm, *key_, opts)
                        : cipher::encrypt_elementwise(sm, *key_, opts);
    const Bytes blob = cipher::serialize(em);
    const auto ref = w.store.put(blob, castore::MediaTag::EncryptedModel);
    w.comm_model_bytes += blob.size();  // upload
    w.timings.encrypt_ms += ms_since(t0);
    w.submit({ledger::TxKind::ModelAnnounced, id_, ledger::Payload{kTaskId, ref.digest, "", 0, false, "", ""}, 0});
    record_->model_ref = ref.digest;
    record_->announced_tick = w.tick;
  }

 public:
  std::uint64_t seed_ = 0;

 private:
  nn::LabeledDataset share_;
  nn::LayeredModel arch_;
  nn::LayeredModel model_;
  ContributorRecord* record_;
  std::optional<ivhe::SwitchKey> key_;
  Stage stage_ = Stage::Idle;
  std::uint64_t ready_tick_ = 0;
};

// ---------------------------------------------------------------------------

class Verifier : public Actor {
 public:
  explicit Verifier(std::string id) : Actor(std::move(id)) {}

  void handle(const Message& m, World&) override {
    if (m.kind == "public-key") key_ = decode_key(m.body);
    if (m.kind == "invite" && m.body == kTaskId) invited_ = true;
  }

  void act(World& w) override {
    if (!key_ || !invited_) return;
    const auto state = w.ledger.state();
    const auto* task = w.task(state);
    if (task == nullptr || task->state == ledger::TaskState::Settled) return;
    if (!registered_) {
      if (w.tick > task->spec.window_end) return;
      w.submit({ledger::TxKind::Registered, id_,
                ledger::Payload{kTaskId, "", "", w.cfg.deposit, false, "verifier", ""}, 0});
      registered_ = true;
      return;
    }
    queue_new_jobs(w, *task);
    while (!jobs_.empty() && jobs_.front().ready_tick <= w.tick) {
      auto job = std::move(jobs_.front());
      jobs_.erase(jobs_.begin());
      bool vote = job.verdict.vote;
      if (w.hooks.vote_filter) vote = w.hooks.vote_filter(id_, job.ref, vote);
      w.submit({ledger::TxKind::VoteCast, id_, ledger::Payload{kTaskId, "", job.ref, 0, vote, "", ""}, 0});
      w.votes.push_back({job.ref, id_, vote, job.verdict.baseline_accuracy, job.verdict.fused_accuracy,
                         job.verdict.diagnostic, w.tick});
    }
  }

 private:
  struct Pending {
    std::string ref;
    Verdict verdict;
    std::uint64_t ready_tick = 0;
  };

  void queue_new_jobs(World& w, const ledger::TaskContract& task) {
    std::vector<std::string> fresh;
    for (const auto& ref : task.model_order) {
      const auto& mv = task.models.at(ref);
      if (seen_.count(ref)) continue;
      if (std::find(mv.quorum.begin(), mv.quorum.end(), id_) == mv.quorum.end()) {
        seen_.insert(ref);
        continue;
      }
      fresh.push_back(ref);
    }
    if (fresh.empty()) return;
    const auto chain = w.ledger.chain();
    for (const auto& ref : fresh) {
      seen_.insert(ref);
      // Accepted set: verdicts settled in blocks before the announcement block.
      std::size_t announce_block = chain.size();
      for (const auto& b : chain) {
        for (const auto& tx : b.txs) {
          if (tx.kind == ledger::TxKind::ModelAnnounced && tx.payload.ref == ref) announce_block = b.index;
        }
      }
      VerificationJob job;
      job.candidate_ref = ref;
      for (std::size_t i = 0; i < announce_block; ++i) {
        for (const auto& tx : chain[i].txs) {
          if (tx.kind == ledger::TxKind::VerdictSettled && tx.sender == ledger::kContractSender &&
              tx.payload.task_id == kTaskId && tx.payload.vote) {
            job.accepted_refs.push_back(tx.payload.target);
          }
        }
      }
      job.sample_ref = task.sample_ref;
      job.seed = Rng::derive(Rng::derive(w.cfg.seed, kVerify), ref_salt(ref));
      job.cfg = VerifyConfig{w.cfg.verify_epochs, w.cfg.verify_learning_rate, w.cfg.fusion_batch_size,
                             w.cfg.verify_margin};
      const auto t0 = Clock::now();
      Pending p;
      p.ref = ref;
      p.verdict = verify_candidate(job, *key_, w.store, &cache_);
      w.comm_model_bytes += w.store.get(ref).size();  // download
      w.timings.verify_ms += ms_since(t0);
      p.ready_tick = w.tick + w.cfg.verify_ticks;
      jobs_.push_back(std::move(p));
    }
  }

  std::optional<ivhe::SwitchKey> key_;
  bool invited_ = false;
  bool registered_ = false;
  std::set<std::string> seen_;
  std::vector<Pending> jobs_;
  FeatureCache cache_;
};

// ---------------------------------------------------------------------------
// Report helpers

ojson he_params_json(const ivhe::HEParams& p) {
  return {{"n", p.n},           {"w", p.w},          {"l", p.l},
          {"a_bound", p.a_bound}, {"e_bound", p.e_bound}, {"t_bound", p.t_bound},
          {"non_negative", p.non_negative}, {"uniform_secret", p.uniform_secret}};
}

nn::TrainConfig head_config(const config::ScenarioConfig& cfg) {
  nn::TrainConfig tc;
  tc.optimizer = nn::OptimizerKind::Adam;
  tc.learning_rate = cfg.fusion_learning_rate;
  tc.batch_size = cfg.fusion_batch_size;
  tc.seed = Rng::derive(cfg.seed, kFusion);
  return tc;
}

cipher::EncryptedModel encrypt_for_report(const nn::LayeredModel& model, std::int64_t p,
                                          const config::ScenarioConfig& cfg, const ivhe::SwitchKey& key) {
  const auto sm = cipher::quantize(model, p, cfg.q, 1 << 12, cipher::SigmoidApprox{3, cfg.sigmoid_divisor});
  cipher::EncryptOptions opts;
  opts.approximate_sigmoid = cfg.approximate_sigmoid;
  return cipher::strategy_from(cfg.strategy) == cipher::Strategy::MatrixPair
             ? cipher::encrypt_matrixpair(sm, key, opts)
             : cipher::encrypt_elementwise(sm, key, opts);
}

}  // namespace

ScenarioResult run_scenario(const config::ScenarioConfig& cfg, const RunHooks& hooks) {
  cfg.validate();
  const auto run_start = Clock::now();
  const int d = cfg.num_classes();
  const auto arch = config::build_arch(cfg.arch, cfg.input_shape(), d);

  // Data: partition pool and held-out test set.
  nn::LabeledDataset pool, test;
  ojson data_info;
  if (cfg.data_source == "synthetic-digits") {
    pool = data::synthetic_digits(cfg.pool_per_class, Rng::derive(cfg.seed, kPool));
    test = data::synthetic_digits(cfg.test_per_class, Rng::derive(cfg.seed, kTest));
    data_info = {{"source", cfg.data_source}, {"pool", pool.size()}, {"test", test.size()}};
  } else if (cfg.data_source == "synthetic-fading") {
    data::FadingParams fp;
    auto all = data::gen_fading_data(Rng::derive(cfg.seed, kPool), cfg.fading_pool, cfg.fading_test, fp);
    pool.shape = test.shape = all.shape;
    pool.num_classes = test.num_classes = all.num_classes;
    for (std::size_t i = 0; i < all.size(); ++i) {
      auto ex = all.examples[i];
      (i < cfg.fading_pool ? pool : test).append(std::move(ex), nn::Split::Train);
    }
    data_info = {{"source", cfg.data_source},
                 {"pool", pool.size()},
                 {"test", test.size()},
                 {"generator",
                  {{"length", fp.length},
                   {"base_dbm", fp.base_dbm},
                   {"shadow_sigma_db", fp.shadow_sigma_db},
                   {"shadow_rho", fp.shadow_rho},
                   {"noise_sigma_db", fp.noise_sigma_db},
                   {"fade_depth_db", {fp.fade_depth_min_db, fp.fade_depth_max_db}},
                   {"fade_len", {fp.fade_len_min, fp.fade_len_max}},
                   {"scale_db", fp.scale_db}}}};
  } else {
    pool = data::ingest_idx(cfg.idx_train_images, cfg.idx_train_labels);
    test = data::ingest_idx(cfg.idx_test_images, cfg.idx_test_labels);
    data_info = {{"source", "idx"}, {"pool", pool.size()}, {"test", test.size()}};
  }
  if (!(pool.shape == cfg.input_shape())) throw ConfigError("data shape does not match the model input");

  std::vector<data::PartitionSpec> specs;
  for (const auto& p : cfg.partitions) specs.push_back({p.labels, p.weights, p.train, p.verify});
  auto sample_labels = cfg.sample.labels;
  if (sample_labels.empty())  // empty = every class
    for (int l = 0; l < cfg.num_classes(); ++l) sample_labels.push_back(l);
  specs.push_back({sample_labels, cfg.sample.weights, cfg.sample.train, cfg.sample.verify});
  auto shares = data::partition(pool, specs, Rng::derive(cfg.seed, kPartition));
  nn::LabeledDataset sample = std::move(shares.back());
  shares.pop_back();

  // Nodes and genesis.
  std::vector<std::string> contributor_ids, verifier_ids, authority_ids;
  for (std::size_t i = 0; i < shares.size(); ++i) contributor_ids.push_back("c" + std::to_string(i + 1));
  for (std::size_t i = 0; i < cfg.verifier_pool; ++i) verifier_ids.push_back("v" + std::to_string(i + 1));
  for (std::size_t i = 0; i < cfg.authorities; ++i) authority_ids.push_back("a" + std::to_string(i + 1));
  std::vector<ledger::Allocation> genesis{{"initiator", cfg.initial_balance}};
  for (const auto& id : contributor_ids) genesis.push_back({id, cfg.initial_balance});
  for (const auto& id : verifier_ids) genesis.push_back({id, cfg.initial_balance});

  World w(cfg, hooks, authority_ids, genesis);

  ScenarioResult result;
  result.contributors.resize(shares.size());
  auto initiator = std::make_unique<Initiator>(cfg, sample, contributor_ids, verifier_ids);
  if (hooks.poison_key) initiator->vault().poison();
  std::vector<std::unique_ptr<Computing>> computing;
  for (std::size_t i = 0; i < shares.size(); ++i) {
    auto& rec = result.contributors[i];
    rec.id = contributor_ids[i];
    rec.labels = cfg.partitions[i].labels;
    rec.train_examples = shares[i].subset(nn::Split::Train).size();
    rec.verify_examples = shares[i].subset(nn::Split::Verify).size();
    computing.push_back(std::make_unique<Computing>(contributor_ids[i], shares[i], arch, &rec));
    computing.back()->seed_ = Rng::derive(cfg.seed, 100 + i);
  }
  std::vector<std::unique_ptr<Verifier>> verifiers;
  for (const auto& id : verifier_ids) verifiers.push_back(std::make_unique<Verifier>(id));

  std::map<std::string, Actor*> by_id;
  by_id[initiator->id()] = initiator.get();
  for (auto& c : computing) by_id[c->id()] = c.get();
  for (auto& v : verifiers) by_id[v->id()] = v.get();

  std::optional<config::Departure> departure;
  if (!cfg.depart.empty()) departure = config::parse_departure(cfg.depart);

  const std::uint64_t max_tick = cfg.window_ticks * 4 + 100;
  bool timed_out = false;
  for (w.tick = 1;; ++w.tick) {
    if (departure && w.tick == departure->tick) {
      auto& c = *computing[departure->contributor - 1];
      c.alive = false;
      result.contributors[departure->contributor - 1].departed_tick = w.tick;
    }
    for (const auto& m : w.net.deliver(w.tick)) {
      auto it = by_id.find(m.to);
      if (it != by_id.end() && it->second->alive) it->second->handle(m, w);
    }
    initiator->act(w);
    for (auto& c : computing)
      if (c->alive) c->act(w);
    for (auto& v : verifiers) v->act(w);
    w.seal();
    if (initiator->done && w.mempool.empty()) break;
    if (w.tick >= max_tick) {
      timed_out = true;
      break;
    }
  }

  // -------------------------------------------------------------------------
  // Settlement and analysis (initiator side; plaintext comparisons use the
  // contributors' original models and are marked as such).
  const auto chain = w.ledger.chain();
  const auto state = w.ledger.state();
  const auto* task = w.task(state);
  const auto head_cfg = head_config(cfg);
  const auto strategy = fusion::strategy_from(cfg.fusion_strategy);
  const std::size_t stage0 = strategy == fusion::Strategy::II ? cfg.fusion_stage0_epochs : cfg.fusion_epochs;
  const std::size_t stage1 = strategy == fusion::Strategy::II ? cfg.fusion_epochs - cfg.fusion_stage0_epochs : 0;
  const auto& secret = initiator->vault().secret(initiator->id());
  const auto& fusion_data = initiator->sample();

  std::map<std::string, std::size_t> ref_owner;
  for (std::size_t i = 0; i < computing.size(); ++i) {
    result.plain_models.push_back(computing[i]->model());
    if (!result.contributors[i].model_ref.empty()) ref_owner[result.contributors[i].model_ref] = i;
    if (result.contributors[i].epochs > 0)
      result.contributors[i].test_accuracy = nn::evaluate(computing[i]->model(), test);
  }

  ojson flags = ojson::array();
  if (computing.empty()) flags.push_back("no contributions");
  if (timed_out) flags.push_back("timed out before settlement");
  // Fusion runs over accepted models in contributor order, independent of
  // which verdict settled first.
  auto accepted = initiator->accepted;
  std::stable_sort(accepted.begin(), accepted.end(),
                   [&](const std::string& a, const std::string& b) { return ref_owner.at(a) < ref_owner.at(b); });
  if (!computing.empty() && accepted.empty()) flags.push_back("no accepted models");

  ojson fusion_j = ojson::object();
  fusion_j["strategy"] = cfg.fusion_strategy;
  fusion_j["accepted"] = initiator->accepted;
  ojson trajectory = ojson::array();
  ojson comparisons = ojson::object();
  std::string manifest_ref;
  const auto t_fuse = Clock::now();
  if (!accepted.empty()) {
    SettleInputs in;
    in.accepted_refs = accepted;
    in.store = &w.store;
    in.secret = &secret;
    in.fusion_data = fusion_data;
    in.strategy = strategy;
    in.head_cfg = head_cfg;
    in.stage0_epochs = stage0;
    in.stage1_epochs = stage1;
    auto settlement = settle_and_fuse(in);
    const auto decrypted_models = settlement.meta.models;
    const double final_acc = fusion::evaluate(settlement.meta, test);

    std::vector<nn::LayeredModel> plain_accepted;
    for (const auto& ref : accepted) plain_accepted.push_back(computing[ref_owner.at(ref)]->model());

    for (std::size_t k = 1; k <= accepted.size(); ++k) {
      ojson row;
      row["models"] = std::vector<std::string>(accepted.begin(), accepted.begin() + static_cast<std::ptrdiff_t>(k));
      std::vector<std::string> owners;
      for (std::size_t i = 0; i < k; ++i) owners.push_back(contributor_ids[ref_owner.at(accepted[i])]);
      row["contributors"] = owners;
      double acc = final_acc;
      if (k < accepted.size()) {
        std::span<const nn::LayeredModel> prefix(decrypted_models.data(), k);
        acc = fusion::evaluate(fuse_models(prefix, fusion_data, strategy, head_cfg, stage0, stage1), test);
      }
      row["accuracy"] = acc;
      if (cfg.compare_plain) {
        std::span<const nn::LayeredModel> prefix(plain_accepted.data(), k);
        row["plain_accuracy"] =
            fusion::evaluate(fuse_models(prefix, fusion_data, strategy, head_cfg, stage0, stage1), test);
      }
      trajectory.push_back(row);
    }
    if (cfg.compare_strategies) {
      const std::size_t e0 = cfg.fusion_stage0_epochs, e1 = cfg.fusion_epochs - cfg.fusion_stage0_epochs;
      comparisons["strategy_I"] = fusion::evaluate(
          fuse_models(decrypted_models, fusion_data, fusion::Strategy::I, head_cfg, cfg.fusion_epochs, 0), test);
      comparisons["strategy_II"] = fusion::evaluate(
          fuse_models(decrypted_models, fusion_data, fusion::Strategy::II, head_cfg, e0, e1), test);
    }
    if (!cfg.p_sweep.empty()) {
      ojson sweep = ojson::array();
      for (auto p : cfg.p_sweep) {
        std::vector<nn::LayeredModel> models;
        for (const auto& m : plain_accepted) {
          const auto em = encrypt_for_report(m, p, cfg, initiator->switch_key());
          models.push_back(cipher::dequantize(cipher::decrypt_model(em, secret)));
        }
        sweep.push_back(
            {{"p", p},
             {"accuracy", fusion::evaluate(fuse_models(models, fusion_data, strategy, head_cfg, stage0, stage1), test)}});
      }
      comparisons["p_sweep"] = sweep;
    }
    auto manifest = fusion::to_manifest(settlement.meta);
    manifest_ref = w.store.put(manifest.dump(), castore::MediaTag::MetamodelManifest).digest;
    fusion_j["accuracy"] = final_acc;
    result.meta = std::move(settlement.meta);
    // Initiator downloads every accepted model once.
    for (const auto& ref : accepted) w.comm_model_bytes += w.store.get(ref).size();
  } else {
    fusion_j["accuracy"] = nullptr;
  }
  w.timings.fuse_ms += ms_since(t_fuse);
  fusion_j["trajectory"] = trajectory;
  fusion_j["comparisons"] = comparisons;
  fusion_j["manifest_ref"] = manifest_ref;

  // Encrypted-vs-plain inference per announced model, on the test set.
  ojson inference = ojson::array();
  double plain_fwd_ms = 0, cipher_fwd_ms = 0;
  for (std::size_t i = 0; i < computing.size(); ++i) {
    const auto& rec = result.contributors[i];
    if (rec.model_ref.empty()) continue;
    const auto em = cipher::deserialize_encrypted_model(w.store.get(rec.model_ref));
    const auto& model = computing[i]->model();
    std::size_t plain_ok = 0, cipher_ok = 0, agree = 0;
    bool wide = false;
    for (const auto& ex : test.examples) {
      auto t0 = Clock::now();
      const auto ps = nn::forward(model, ex.input);
      plain_fwd_ms += ms_since(t0);
      t0 = Clock::now();
      const auto lanes = cipher::forward_cipher(em, ex.input);
      cipher_fwd_ms += ms_since(t0);
      wide = wide || lanes.wide;
      const auto cs = cipher::decrypt_scores(lanes, secret);
      const auto pa = nn::argmax(ps), ca = nn::argmax(cs);
      plain_ok += pa == static_cast<std::size_t>(ex.label);
      cipher_ok += ca == static_cast<std::size_t>(ex.label);
      agree += pa == ca;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, test.size()));
    inference.push_back({{"contributor", rec.id},
                         {"plain_accuracy", plain_ok / n},
                         {"cipher_accuracy", cipher_ok / n},
                         {"argmax_agreement", agree / n},
                         {"lanes", wide ? "int128" : "int64"},
                         {"noise_bound_scores", cipher::noise_bound_scores(em, 1.0)},
                         {"blob_bytes", w.store.get(rec.model_ref).size()}});
  }

  // FedAvg baseline over the same shares (contributors plus the initiator's sample).
  ojson fedavg_j = nullptr;
  std::uint64_t fedavg_bytes = 0;
  if (cfg.fedavg) {
    std::vector<nn::LabeledDataset> clients = shares;
    clients.push_back(sample);
    nn::LayeredModel init = arch;
    nn::init_weights(init, Rng::derive(cfg.seed, kFedAvg));
    nn::TrainConfig tc;
    tc.optimizer = cfg.optimizer == "sgd" ? nn::OptimizerKind::Sgd : nn::OptimizerKind::Adam;
    tc.learning_rate = cfg.learning_rate;
    tc.batch_size = cfg.batch_size;
    tc.seed = Rng::derive(cfg.seed, kFedAvg + 1);
    const auto fa = fusion::fedavg_baseline(clients, init, cfg.fedavg_rounds, cfg.fedavg_local_epochs, tc, &test);
    fedavg_bytes = fa.bytes_transferred;
    fedavg_j = {{"clients", clients.size()},
                {"rounds", cfg.fedavg_rounds},
                {"local_epochs", cfg.fedavg_local_epochs},
                {"accuracy", nn::evaluate(fa.model, test)},
                {"round_accuracy", fa.round_accuracy},
                {"bytes_transferred", fa.bytes_transferred}};
  }

  // Contributors, votes, verdicts.
  ojson contributors_j = ojson::array();
  for (const auto& c : result.contributors) {
    contributors_j.push_back({{"id", c.id},
                              {"labels", c.labels},
                              {"train_examples", c.train_examples},
                              {"verify_examples", c.verify_examples},
                              {"epochs", c.epochs},
                              {"local_accuracy", c.local_accuracy},
                              {"test_accuracy", c.test_accuracy},
                              {"reached_threshold", c.reached_threshold},
                              {"model_ref", c.model_ref},
                              {"announced_tick", c.announced_tick ? ojson(*c.announced_tick) : ojson(nullptr)},
                              {"departed_tick", c.departed_tick ? ojson(*c.departed_tick) : ojson(nullptr)}});
  }
  ojson votes_j = ojson::array();
  for (const auto& v : w.votes) {
    votes_j.push_back({{"model_ref", v.model_ref},
                       {"verifier", v.verifier},
                       {"vote", v.vote},
                       {"baseline_accuracy", v.baseline_accuracy},
                       {"fused_accuracy", v.fused_accuracy},
                       {"diagnostic", v.diagnostic},
                       {"tick", v.tick}});
  }
  ojson verdicts_j = ojson::array();
  std::uint64_t last_verdict_tick = 0;
  for (const auto& b : chain) {
    for (const auto& tx : b.txs) {
      if (tx.kind == ledger::TxKind::VerdictSettled && tx.sender == ledger::kContractSender) {
        const auto& mv = task->models.at(tx.payload.target);
        std::int64_t yes = 0;
        for (const auto& [_, v] : mv.votes) yes += v;
        verdicts_j.push_back({{"model_ref", tx.payload.target},
                              {"contributor", mv.contributor},
                              {"yes", yes},
                              {"no", static_cast<std::int64_t>(mv.votes.size()) - yes},
                              {"accepted", tx.payload.vote},
                              {"block", b.index},
                              {"tick", b.timestamp}});
        last_verdict_tick = b.timestamp;
      }
    }
  }
  ojson pending = ojson::array();
  if (task != nullptr) {
    for (const auto& ref : task->model_order)
      if (!task->models.at(ref).verdict) pending.push_back(ref);
  }

  // Ledger export and audit.
  result.chain = chain;
  result.chain_jsonl = ledger::chain_to_jsonl(chain);
  const auto supply = w.ledger.supply_history();
  const bool conserved = std::all_of(supply.begin(), supply.end(), [&](auto s) { return s == supply.front(); });
  const auto vr = ledger::verify_chain(chain, authority_ids);
  bool replay_ok = true;
  try {
    (void)ledger::replay(chain);
  } catch (const Error&) {
    replay_ok = false;
  }

  std::uint64_t proposed_bytes = w.comm_model_bytes;
  ojson comm = {{"proposed_model_bytes", proposed_bytes}};
  if (cfg.fedavg) comm["fedavg_weight_bytes"] = fedavg_bytes;

  ojson report;
  report["format"] = "chainlearn.run-report";
  report["version"] = 1;
  report["scenario"] = cfg.scenario;
  report["seed"] = cfg.seed;
  report["config"] = ojson::parse(config::to_json(cfg).dump());
  report["data"] = data_info;
  report["encryption"] = {{"strategy", cfg.strategy},
                          {"params", he_params_json(initiator->switch_key().params)},
                          {"p", cfg.p},
                          {"q", cfg.q},
                          {"noise_policy", cfg.noise_policy},
                          {"key_id", initiator->switch_key().id()}};
  report["contributors"] = contributors_j;
  report["votes"] = votes_j;
  report["verdicts"] = verdicts_j;
  report["pending_models"] = pending;
  report["fusion"] = fusion_j;
  report["inference"] = inference;
  report["fedavg"] = fedavg_j;
  report["communication"] = comm;
  report["network"] = {{"sent", w.net.stats().sent},
                       {"delivered", w.net.stats().delivered},
                       {"dropped", w.net.stats().dropped},
                       {"bytes", w.net.stats().bytes}};
  report["ticks"] = {{"published", initiator->published_tick},
                     {"window_end", task ? ojson(task->spec.window_end) : ojson(nullptr)},
                     {"last_verdict", last_verdict_tick},
                     {"settled", initiator->settled_tick},
                     {"final", w.tick}};
  report["ledger"] = {{"height", chain.size()},
                      {"head_hash", chain.back().hash},
                      {"export_sha256", sha256_hex(result.chain_jsonl)},
                      {"chain_valid", vr.ok},
                      {"replay_ok", replay_ok},
                      {"supply_initial", supply.front()},
                      {"supply_final", supply.back()},
                      {"supply_conserved", conserved},
                      {"rejected_transactions", w.rejected},
                      {"final_state", ojson::parse(state.to_json().dump())}};
  report["flags"] = flags;
  if (cfg.wall_time) {
    report["timings_ms"] = {{"total", ms_since(run_start)},
                            {"local_training", w.timings.train_ms},
                            {"encryption", w.timings.encrypt_ms},
                            {"verification", w.timings.verify_ms},
                            {"settlement_and_fusion", w.timings.fuse_ms},
                            {"plain_forward_test_set", plain_fwd_ms},
                            {"cipher_forward_test_set", cipher_fwd_ms}};
  }
  result.report = std::move(report);
  result.report_text = result.report.dump(2) + "\n";
  result.votes = w.votes;
  result.key_access_log = initiator->vault().access_log();
  return result;
}

// ---------------------------------------------------------------------------
// Report schema

nlohmann::json report_schema() {
  return {{"format", "chainlearn.run-report"},
          {"version", 1},
          {"required",
           {{"format", "string"},
            {"version", "number"},
            {"scenario", "string"},
            {"seed", "number"},
            {"config", "object"},
            {"data", "object"},
            {"encryption", "object"},
            {"contributors", "array"},
            {"votes", "array"},
            {"verdicts", "array"},
            {"pending_models", "array"},
            {"fusion", "object"},
            {"inference", "array"},
            {"fedavg", "object|null"},
            {"communication", "object"},
            {"network", "object"},
            {"ticks", "object"},
            {"ledger", "object"},
            {"flags", "array"}}},
          {"optional", {{"timings_ms", "object"}}}};
}

namespace {

bool type_matches(const nlohmann::json& v, const std::string& type) {
  if (type == "string") return v.is_string();
  if (type == "number") return v.is_number();
  if (type == "object") return v.is_object();
  if (type == "array") return v.is_array();
  if (type == "object|null") return v.is_object() || v.is_null();
  return false;
}

void check_accuracy(const nlohmann::json& v, const std::string& where) {
  if (v.is_null()) return;
  if (!v.is_number()) throw FormatError(where + ": accuracy is not a number");
  const double a = v.get<double>();
  if (!(a >= 0.0 && a <= 1.0)) throw FormatError(where + ": accuracy outside [0, 1]");
}

}  // namespace

void validate_report(const nlohmann::json& report) {
  if (!report.is_object()) throw FormatError("report is not an object");
  const auto schema = report_schema();
  if (report.value("format", "") != schema["format"]) throw FormatError("report: wrong format tag");
  if (report.value("version", 0) != 1) throw FormatError("report: unsupported version");
  for (const auto& [key, type] : schema["required"].items()) {
    if (!report.contains(key)) throw FormatError("report: missing '" + key + "'");
    if (!type_matches(report[key], type.get<std::string>()))
      throw FormatError("report: '" + key + "' is not " + type.get<std::string>());
  }
  for (const auto& [key, _] : report.items()) {
    if (!schema["required"].contains(key) && !schema["optional"].contains(key))
      throw FormatError("report: unexpected key '" + key + "'");
  }
  for (const auto& c : report["contributors"]) {
    check_accuracy(c.at("local_accuracy"), "contributors");
    check_accuracy(c.at("test_accuracy"), "contributors");
  }
  for (const auto& v : report["votes"]) {
    check_accuracy(v.at("baseline_accuracy"), "votes");
    check_accuracy(v.at("fused_accuracy"), "votes");
  }
  check_accuracy(report["fusion"].at("accuracy"), "fusion");
  for (const auto& row : report["fusion"].at("trajectory")) {
    check_accuracy(row.at("accuracy"), "fusion.trajectory");
    if (row.contains("plain_accuracy")) check_accuracy(row["plain_accuracy"], "fusion.trajectory");
  }
  for (const auto& [k, v] : report["fusion"].at("comparisons").items()) {
    if (k == "p_sweep") {
      for (const auto& row : v) check_accuracy(row.at("accuracy"), "fusion.p_sweep");
    } else {
      check_accuracy(v, "fusion.comparisons");
    }
  }
  for (const auto& row : report["inference"]) {
    check_accuracy(row.at("plain_accuracy"), "inference");
    check_accuracy(row.at("cipher_accuracy"), "inference");
    check_accuracy(row.at("argmax_agreement"), "inference");
  }
  if (report["fedavg"].is_object()) check_accuracy(report["fedavg"].at("accuracy"), "fedavg");
  for (const auto& key : {"height", "head_hash", "export_sha256", "chain_valid", "supply_conserved"}) {
    if (!report["ledger"].contains(key)) throw FormatError(std::string("report: ledger lacks '") + key + "'");
  }
}

}  // namespace chainlearn::protocol
