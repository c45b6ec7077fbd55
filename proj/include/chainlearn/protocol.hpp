#pragma once

// Actor layer: initiator, computing contributors and verifiers exchanging
// messages over a seeded in-process network, publishing to the ledger and the
// content store, and ending in a fused MetaModel plus a RunReport.
//
// The simulation is a single-threaded tick loop. At each tick: due messages
// are delivered (per-link FIFO), every live actor handles its inbox and then
// acts, and the scheduled authority seals the mempool into a block.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "chainlearn/castore.hpp"
#include "chainlearn/ciphernet.hpp"
#include "chainlearn/config.hpp"
#include "chainlearn/fusion.hpp"
#include "chainlearn/ivhe.hpp"
#include "chainlearn/ledger.hpp"

#include <json.hpp>

namespace chainlearn::protocol {

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

struct Message {
  std::string from, to;
  std::string kind;   // "public-key", "invite"
  std::string body;
  std::uint64_t sent_tick = 0;
  std::uint64_t deliver_tick = 0;
  std::uint64_t seq = 0;  // global send order
};

struct NetworkStats {
  std::uint64_t sent = 0, delivered = 0, dropped = 0, bytes = 0;
};

class SimNetwork {
 public:
  SimNetwork(std::uint64_t seed, std::uint64_t delay_min, std::uint64_t delay_max, double drop_probability);

  // Delay drawn uniformly from [delay_min, delay_max] and raised if needed so
  // that a link never delivers out of send order.
  void send(Message m, std::uint64_t now);

  // Every message due at or before `tick`, ordered by (deliver_tick, seq).
  std::vector<Message> deliver(std::uint64_t tick);

  bool idle() const { return queue_.empty(); }
  const NetworkStats& stats() const { return stats_; }

 private:
  struct Later {
    bool operator()(const Message& a, const Message& b) const {
      return a.deliver_tick != b.deliver_tick ? a.deliver_tick > b.deliver_tick : a.seq > b.seq;
    }
  };
  Rng rng_;
  std::uint64_t dmin_, dmax_;
  double drop_;
  std::uint64_t next_seq_ = 0;
  std::map<std::pair<std::string, std::string>, std::uint64_t> last_delivery_;
  std::priority_queue<Message, std::vector<Message>, Later> queue_;
  NetworkStats stats_;
};

// ---------------------------------------------------------------------------
// Secret key custody
// ---------------------------------------------------------------------------

class PrivacyError : public Error {
  using Error::Error;
};

// Holds the initiator's secret key and records every access. When poisoned,
// access by anyone other than the owner throws PrivacyError.
class KeyVault {
 public:
  KeyVault(std::string owner, ivhe::SecretKey key) : owner_(std::move(owner)), key_(std::move(key)) {}

  const ivhe::SecretKey& secret(const std::string& caller);
  void poison() { poisoned_ = true; }
  const std::vector<std::string>& access_log() const { return log_; }
  const std::string& owner() const { return owner_; }

 private:
  std::string owner_;
  ivhe::SecretKey key_;
  bool poisoned_ = false;
  std::vector<std::string> log_;
};

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

struct VerifyConfig {
  std::size_t epochs = 30;
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  double margin = 0.0;  // yes iff fused > baseline + margin
};

struct VerificationJob {
  std::string candidate_ref;
  std::vector<std::string> accepted_refs;  // settled before the candidate's announcement
  std::string sample_ref;
  std::uint64_t seed = 0;
  VerifyConfig cfg;
};

struct Verdict {
  bool vote = false;
  double baseline_accuracy = 0.0;
  double fused_accuracy = 0.0;
  std::string diagnostic;
};

// Normalized lane features of one encrypted model over a dataset.
fusion::FeatureSet lane_feature_set(const cipher::EncryptedModel& em, const nn::LabeledDataset& data);

// Per-verifier memo of lane features, keyed by model ref.
using FeatureCache = std::map<std::string, fusion::FeatureSet>;

// Votes yes iff a Strategy-I head on the lane features of (accepted +
// candidate) beats one on (accepted) alone, measured on the sample set's
// Verify split after training on its Train split. The empty accepted set
// scores 1/d. Candidates whose lane features duplicate an accepted model's,
// malformed blobs and blobs under another key get a no vote with a
// diagnostic. Uses only public material.
Verdict verify_candidate(const VerificationJob& job, const ivhe::SwitchKey& key, const castore::Store& store,
                         FeatureCache* cache = nullptr);

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

struct ContributorRecord {
  std::string id;
  std::vector<int> labels;
  std::size_t train_examples = 0, verify_examples = 0;
  double local_accuracy = 0.0;  // on its own Verify split
  double test_accuracy = 0.0;   // plaintext model on the global test set
  std::size_t epochs = 0;
  bool reached_threshold = false;
  std::string model_ref;        // encrypted model digest, once announced
  std::optional<std::uint64_t> announced_tick;
  std::optional<std::uint64_t> departed_tick;
};

struct VoteRecord {
  std::string model_ref, verifier;
  bool vote = false;
  double baseline_accuracy = 0.0, fused_accuracy = 0.0;
  std::string diagnostic;
  std::uint64_t tick = 0;
};

struct ScenarioResult {
  nlohmann::ordered_json report;
  std::string report_text;  // report.dump(2) + "\n"
  std::string chain_jsonl;
  std::vector<ledger::Block> chain;
  std::optional<fusion::MetaModel> meta;
  std::vector<std::string> key_access_log;
  std::vector<ContributorRecord> contributors;
  std::vector<VoteRecord> votes;
  // Plaintext models trained by the contributors (analysis only).
  std::vector<nn::LayeredModel> plain_models;
};

struct RunHooks {
  std::optional<std::filesystem::path> store_root;  // directory-backed content store
  bool poison_key = false;  // poison the vault before any actor runs
  // Called with each vote before submission; may flip it (fault injection).
  std::function<bool(const std::string& verifier, const std::string& model_ref, bool vote)> vote_filter;
};

// Validates the config, then runs the full flow: key generation, public key
// broadcast, local training, encrypt and announce, verification and voting,
// settlement, decryption and fusion.
ScenarioResult run_scenario(const config::ScenarioConfig& cfg, const RunHooks& hooks = {});

// Everything the initiator needs once the window closes.
struct SettleInputs {
  std::vector<std::string> accepted_refs;  // acceptance order
  const castore::Store* store = nullptr;
  const ivhe::SecretKey* secret = nullptr;
  nn::LabeledDataset fusion_data;
  fusion::Strategy strategy = fusion::Strategy::II;
  nn::TrainConfig head_cfg;
  std::size_t stage0_epochs = 0, stage1_epochs = 0;
};

struct Settlement {
  fusion::MetaModel meta;
  std::vector<cipher::ScaledModel> decrypted;  // integer models as recovered
};

// Fetch, decrypt, de-quantize and fuse. IntegrityError on a digest mismatch.
Settlement settle_and_fuse(const SettleInputs& in);

// Fuse plaintext models with the given strategy and settings.
fusion::MetaModel fuse_models(std::span<const nn::LayeredModel> models, const nn::LabeledDataset& data,
                              fusion::Strategy strategy, const nn::TrainConfig& cfg, std::size_t stage0,
                              std::size_t stage1);

// Schema of the RunReport (top-level keys and their JSON types).
nlohmann::json report_schema();
// Throws FormatError naming the first violation.
void validate_report(const nlohmann::json& report);

}  // namespace chainlearn::protocol
