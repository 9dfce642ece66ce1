#pragma once

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "fidosim/baseline.hpp"

namespace fidosim {

/// Code identity of a Verifier build. Two instances built from the same
/// identity string and version have equal measurements.
Digest verifier_measurement(const std::string& identity, uint32_t version);

struct AttestationReport {
  Digest measurement;
  std::array<uint8_t, 32> kex_public{};
  std::string platform_id;
  Bytes service_signature;

  /// Bytes the service signs: measurement || kex_public || platform_id.
  Bytes canonical() const;
  Bytes encode() const;
  static AttestationReport decode(ByteView data);
};

/// Stand-in for the vendor attestation service (the IAS role): signs
/// reports for genuine enclaves under a root key.
class AttestationService {
 public:
  explicit AttestationService(Rng& rng)
      : keypair_(generate_keypair(SigAlg::StrongEc, rng)) {}

  AttestationReport issue(const Digest& measurement, const std::array<uint8_t, 32>& kex_public,
                          const std::string& platform_id) const;
  const Bytes& public_key() const { return keypair_.public_key; }

 private:
  KeyPair keypair_;
};

bool verify_report(const Bytes& service_public, const AttestationReport& report);

enum class AttestOutcome { Ok, NoTee, MeasurementMismatch, BadServiceSignature };
const char* to_string(AttestOutcome o);

struct ChannelResult {
  AttestOutcome outcome;
  std::optional<SymmetricKey> key;  // peer-side copy; the Verifier holds its own
};

enum class ProtocolVariant { VFido2, Legacy };

struct FallbackDecision {
  ProtocolVariant variant;
  bool blocked;  // client claimed no TEE but the account requires one
};

/// Legacy only when the client has no TEE; an account already bound to the
/// hardened protocol refuses the downgrade.
FallbackDecision negotiate_fallback(bool client_claims_tee, bool account_requires_tee);

struct BuiltinCredential {
  std::string rp_id;
  std::string username;
  CredentialId id{};
  KeyPair keypair;
  uint32_t counter = 0;
  HskChallengeSlot slot;
};

/// The verifier runs inside a TEE on the client machine: it MAC-verifies
/// and origin-checks every message, re-keys it for the next leg, and hosts
/// the sealed built-in authenticator.
class VerifierSim : public Entity {
 public:
  VerifierSim(EntityId id, Rng* rng)
      : measurement(verifier_measurement("v-fido2-verifier", 1)), id_(std::move(id)), rng_(rng) {}

  const EntityId& id() const override { return id_; }
  void handle(const MessageEnvelope& env, Scheduler& sched) override;
  Json snapshot() const override;

  /// Attestation, enclave side: draw an ephemeral key-exchange pair and
  /// have the service sign the report. Absent when the host has no TEE.
  std::optional<AttestationReport> produce_report(const AttestationService& svc);
  SymmetricKey finish_attestation(const std::array<uint8_t, 32>& peer_public) const;

  enum class Role { RpChannel, HskChannel };
  void install_key(Role role, const std::string& rp_id, const SymmetricKey& key);

  /// Built-in ("remember this device") authenticator. Arming requires a
  /// fresh assertion from the external HSK; the next registration request
  /// for that RP is then answered from inside the enclave.
  enum class BuiltinStatus { Ok, ApprovalRequired };
  BuiltinStatus arm_builtin(const std::string& rp_id, bool fresh_external_assertion,
                            int remember_days, int today);

  enum class SealStatus { Ok, SealCorrupted };
  Bytes seal_builtin() const;
  SealStatus load_sealed(ByteView blob);

  bool tee_present = true;
  Digest measurement;
  std::string platform_id = "user-host";

  EntityId hsk_id;
  EntityId client_id;
  KeyPair platform_attestation_keypair;
  std::map<CredentialId, BuiltinCredential> builtin_credentials;
  int remember_expiry_day = 0;
  std::vector<std::string> refusals;

 private:
  bool mac_ok_sk1(const MessageEnvelope& env) const;
  void relay_request(const MessageEnvelope& env, Scheduler& sched);
  void relay_response(const MessageEnvelope& env, Scheduler& sched);
  void answer_builtin_registration(const RegistrationRequest& req, const std::string& origin,
                                   const std::string& sk1_key, Scheduler& sched);
  bool answer_builtin_auth(const AuthRequest& req, const std::string& origin,
                           const std::string& sk1_key, Scheduler& sched);
  SymmetricKey sealing_key() const;

  std::set<std::string> armed_rp_ids_;
  std::map<std::string, SymmetricKey> sk1_by_rp_;
  std::optional<SymmetricKey> sk2_;
  std::map<std::string, std::string> pending_rp_;  // response key -> rp_id
  bool awaiting_hsk_ack_ = false;
  KexKeyPair kex_{};
  EntityId id_;
  Rng* rng_;
};

/// Full attested-channel setup between a peer (RP or HSK harness side) and
/// the Verifier; on success both ends hold the same key.
ChannelResult establish_channel(VerifierSim& v, VerifierSim::Role role, const std::string& rp_id,
                                const AttestationService& svc, const Digest& expected_measurement,
                                const Bytes& service_public, Rng& peer_rng);

}  // namespace fidosim
