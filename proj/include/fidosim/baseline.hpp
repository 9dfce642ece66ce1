#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fidosim/core.hpp"
#include "fidosim/hashlist.hpp"
#include "fidosim/sim.hpp"

namespace fidosim {

using CredentialId = std::array<uint8_t, 16>;
using Challenge = std::array<uint8_t, 32>;

std::string hex(ByteView data);

// --- message bodies ---------------------------------------------------------

struct RegistrationRequest {
  Challenge challenge{};
  std::string rp_id;
  std::string rp_name;
  std::string username;
  std::vector<SigAlg> alg_list;  // strongest first as issued by an honest RP
  bool requires_user_presence = true;
  bool first_authenticator = true;  // no HSK bound to this account yet

  Bytes encode() const;
  static RegistrationRequest decode(ByteView data);
};

enum class CtapRequestType : uint8_t { Create = 0, Get = 1 };

struct CtapRegistrationRequest {
  RegistrationRequest inner;
  std::string origin;  // set by the client (or Verifier), never by the RP payload
  CtapRequestType request_type = CtapRequestType::Create;

  Bytes encode() const;
  static CtapRegistrationRequest decode(ByteView data);
};

struct AttestationResponse {
  CredentialId credential_id{};
  Bytes public_key;
  SigAlg alg = SigAlg::StrongEc;
  Digest rp_id_hash;
  uint32_t counter = 0;
  Bytes attestation_sig;  // over (rp_id_hash || credential_id || public_key || counter)
  Digest client_data_hash;
  std::string make_model;

  Bytes attested_data() const;
  Bytes encode() const;
  static AttestationResponse decode(ByteView data);
};

struct AuthRequest {
  Challenge challenge{};
  std::string rp_id;
  std::vector<CredentialId> allowed_credential_ids;

  Bytes encode() const;
  static AuthRequest decode(ByteView data);
};

struct CtapAuthRequest {
  AuthRequest inner;
  std::string origin;

  Bytes encode() const;
  static CtapAuthRequest decode(ByteView data);
};

struct AssertionResponse {
  CredentialId credential_id{};
  uint32_t counter = 0;
  Bytes signature;  // over (rp_id_hash || counter || client_data_hash)
  Digest client_data_hash;
  Challenge challenge_echo{};  // lets the RP match its pending request
  std::optional<Digest> stored_challenge_hash;  // hash-list mode only

  Bytes signed_data(const Digest& rp_id_hash) const;
  Bytes encode() const;
  static AssertionResponse decode(ByteView data);
};

struct RegistrationAck {
  Digest response_hash;  // hash of the canonical response bytes the RP accepted

  Bytes encode() const;
  static RegistrationAck decode(ByteView data);
};

struct NotificationBody {
  std::string body;
  std::string nickname;
  std::string make_model;
  bool mentions_make_model = false;
  bool mentions_total_hsk_count = false;
  uint32_t total_hsks = 0;

  Bytes encode() const;
  static NotificationBody decode(ByteView data);
};

Digest client_data_digest(const Challenge& challenge, const std::string& origin);

// --- policies ---------------------------------------------------------------

enum class AddHskAuth : uint8_t { None = 0, Password = 1, ExistingHsk = 2 };
enum class CloneErrorStyle : uint8_t { Generic = 0, Specific = 1 };
enum class CloneMode : uint8_t { Counter = 0, HashList = 1 };
enum class CounterMode : uint8_t { PerCredential = 0, Global = 1 };

const char* to_string(CloneMode m);
std::optional<CloneMode> clone_mode_from_string(const std::string& s);

struct RpPolicy {
  bool require_attestation = false;
  AddHskAuth auth_before_additional_hsk = AddHskAuth::None;
  bool sends_registration_email = false;
  bool email_includes_make_model = false;
  SigAlg min_alg = SigAlg::StrongEc;
  int remember_device_days = 730;
  CloneErrorStyle clone_error_style = CloneErrorStyle::Generic;
  std::string clone_error_text = "Security key authentication failed";
  std::optional<int> max_hsks;
};

/// The ten analyzed relying parties plus CUSTOM.
std::optional<RpPolicy> rp_preset(const std::string& name);
std::vector<std::string> rp_preset_names();

inline constexpr const char* kSpecificCloneError = "Your security key may have been cloned.";

/// Make & model string reported for device-resident (built-in) credentials;
/// the RP uses it to tag them as non-removable.
inline constexpr const char* kBuiltinMakeModel = "v-fido2-builtin";

// --- user model -------------------------------------------------------------

enum class TapBehavior : uint8_t { Always = 0, OnlyIfDisplayMatchesIntent = 1 };

struct UserPolicy {
  bool verifies_display = false;
  TapBehavior taps_when_prompted = TapBehavior::Always;
  bool reads_notifications = false;
  bool retries_on_double_prompt = true;
};

UserPolicy vigilant_user();
UserPolicy negligent_user();

struct DisplayPanel {
  std::string rp_name;
  std::optional<std::string> username;
  bool is_first_authenticator = false;
  bool secure_enclave = false;
  enum class AckStatus { Pending, Success, Warning } ack_status = AckStatus::Pending;
};

struct UserIntent {
  std::string rp_name;
  std::string username;
  bool first_registration = true;
  bool tee_capable = false;
  int expected_prompts = 0;
};

class UserSim : public Entity {
 public:
  UserSim(EntityId id, UserPolicy policy) : id_(std::move(id)), policy_(policy) {}

  const EntityId& id() const override { return id_; }
  void handle(const MessageEnvelope& env, Scheduler& sched) override;

  /// Presence prompt, with the HSK display contents when the device has one.
  bool decide_tap(const std::optional<DisplayPanel>& panel, Scheduler& sched);

  UserIntent intent;
  std::string expected_make_model;  // the device this user actually owns
  UserPolicy& policy() { return policy_; }
  const std::vector<NotificationBody>& notifications() const { return notifications_; }

 private:
  EntityId id_;
  UserPolicy policy_;
  std::vector<NotificationBody> notifications_;
};

// --- HSK --------------------------------------------------------------------

struct HskCredential {
  std::string rp_id;
  std::string username;
  KeyPair keypair;
  uint32_t counter = 0;
  HskChallengeSlot slot;
};

/// Hardware security key state machine. In v-FIDO2 scenarios the device
/// carries a display and an sk2 channel key shared with the Verifier.
class HskSim : public Entity {
 public:
  HskSim(EntityId id, Rng* rng) : id_(std::move(id)), rng_(rng) {}

  const EntityId& id() const override { return id_; }
  void handle(const MessageEnvelope& env, Scheduler& sched) override;
  Json snapshot() const override;

  enum class Status {
    Registered,
    Asserted,
    UserPresenceDenied,
    NoAcceptableAlgorithm,
    MacFailure,
    UnknownCredential,
  };

  /// Direct-call entry points (also used by A2's physical access).
  Status process_registration(const CtapRegistrationRequest& req, bool channel_secure,
                              Scheduler* sched, AttestationResponse* out);
  Status process_authentication(const CtapAuthRequest& req, bool channel_secure,
                                Scheduler* sched, AssertionResponse* out);
  void process_ack(const RegistrationAck& ack, Scheduler& sched);

  /// Physical clone: deep copy of all credential state.
  HskSim clone_state(EntityId new_id) const;

  /// End-of-scenario check: a registration response with no acknowledgment
  /// leaves the display in WARNING (cuckoo detection).
  void finalize_acks(Scheduler& sched);

  std::string device_id;
  std::string make_model = "YubiKey 5C";
  std::set<SigAlg> supported_algs{SigAlg::StrongEc, SigAlg::StrongRsa, SigAlg::WeakToy};
  CounterMode counter_mode = CounterMode::PerCredential;
  uint32_t global_counter = 0;
  KeyPair attestation_keypair;       // vendor group key, shared across devices
  std::string attestation_group;     // which vendor group the key belongs to
  bool auto_tap = false;             // adversary robo-finger
  bool display_equipped = false;     // v-FIDO2 security key display
  bool supports_hash_slot = true;    // false models a legacy counter-only HSK
  CloneMode clone_mode = CloneMode::Counter;
  std::optional<SymmetricKey> sk2;   // channel key with the Verifier
  UserSim* user = nullptr;

  std::map<CredentialId, HskCredential> credentials;
  std::optional<DisplayPanel> last_display;
  Bytes last_response_bytes;  // canonical bytes of the last registration response
  bool awaiting_ack = false;  // registration response sent, ack outstanding

  const SymmetricKey* channel_key() const { return sk2 ? &*sk2 : nullptr; }

 private:
  uint32_t next_counter(HskCredential& cred);
  EntityId id_;
  Rng* rng_;
};

// --- RP ---------------------------------------------------------------------

struct RpCredential {
  Bytes public_key;
  SigAlg alg = SigAlg::StrongEc;
  uint32_t counter = 0;
  HashListState hash_list;
  std::string nickname;
  std::string make_model;
  bool builtin = false;
  bool frozen = false;  // set on clone detection
};

struct RememberCookie {
  std::array<uint8_t, 32> value{};
  std::string username;
  int expiry_day = 0;
};

struct RpAccount {
  std::string username;
  std::map<CredentialId, RpCredential> credentials;
  std::vector<NotificationBody> notification_outbox;
};

/// Evidence presented when adding an additional authenticator.
struct AddHskEvidence {
  bool password_ok = false;
  bool fresh_assertion = false;
};

struct Route {
  EntityId first_hop;  // victim client, verifier relay, or adversary device
  bool mac = false;    // v-FIDO2 authenticated channel
};

struct AuthOptions {
  EntityId requester;            // device/session owner credited on success
  bool remember_selected = false;
  bool builtin = false;
  std::optional<std::vector<CredentialId>> allow_list;
};

class RpSim : public Entity {
 public:
  enum class Status {
    Ok,
    MaxHsksReached,
    PolicyDenied,
    BadSignature,
    AttestationRequiredButInvalid,
    ChallengeMismatch,
    CloneSuspected,
    UnknownCredential,
    MacFailure,
    ExpiredCookie,
    UnknownCookie,
    CredentialFrozen,
  };

  RpSim(EntityId id, std::string rp_id, std::string rp_name, RpPolicy policy, Rng* rng)
      : id_(std::move(id)),
        rp_id_(std::move(rp_id)),
        rp_name_(std::move(rp_name)),
        policy_(policy),
        rng_(rng) {}

  const EntityId& id() const override { return id_; }
  void handle(const MessageEnvelope& env, Scheduler& sched) override;
  Json snapshot() const override;

  RpAccount& ensure_account(const std::string& username);

  /// Issues a registration request, enforcing max-HSK and add-additional
  /// policy, and enqueues it on the route.
  Status begin_registration(const std::string& username, const Route& route,
                            const AddHskEvidence& evidence, Scheduler& sched);
  Status begin_authentication(const std::string& username, const Route& route,
                              const AuthOptions& opts, Scheduler& sched);

  Status accept_cookie(const std::array<uint8_t, 32>& value, bool password_ok,
                       const EntityId& requester, Scheduler& sched);

  std::string rp_id() const { return rp_id_; }
  std::string origin() const { return "https://" + rp_id_; }
  RpPolicy& policy() { return policy_; }
  CloneMode clone_mode = CloneMode::Counter;
  std::optional<SymmetricKey> sk1;      // channel key with the Verifier
  /// Vendor group name -> group public key trusted for attestation.
  std::map<std::string, Bytes> trusted_attestation_keys;
  EntityId user_id{EntityKind::User, "user"};

  std::map<std::string, RpAccount>& accounts() { return accounts_; }
  const std::vector<RememberCookie>& issued_cookies() const { return issued_cookies_; }
  Status last_status() const { return last_status_; }
  std::string last_error_text() const { return last_error_text_; }

 private:
  struct PendingReg {
    RegistrationRequest request;
    Route route;
  };
  struct PendingAuth {
    AuthRequest request;
    Route route;
    AuthOptions opts;
    std::string username;
  };

  Status finish_registration(const AttestationResponse& resp, const MessageEnvelope& env,
                             Scheduler& sched);
  Status finish_authentication(const AssertionResponse& resp, const MessageEnvelope& env,
                               Scheduler& sched);
  void emit_registration_notification(const RpAccount& account, const RpCredential& cred,
                                      Scheduler& sched);
  void clone_detected(RpAccount& account, RpCredential& cred, Scheduler& sched, bool freeze);
  Status fail(Status s, Scheduler* sched);

  EntityId id_;
  std::string rp_id_;
  std::string rp_name_;
  RpPolicy policy_;
  Rng* rng_;
  std::map<std::string, RpAccount> accounts_;
  std::vector<PendingReg> pending_regs_;
  std::vector<PendingAuth> pending_auths_;
  std::vector<RememberCookie> issued_cookies_;
  Status last_status_ = Status::Ok;
  std::string last_error_text_;
};

const char* to_string(RpSim::Status s);

// --- WebAuthn client --------------------------------------------------------

enum class ClientMode : uint8_t { Baseline = 0, VerifierRelay = 1 };

/// Browser-side relay. Honest behavior: sets the page origin on the CTAP
/// wrapper and forwards payloads byte-identically.
class ClientSim : public Entity {
 public:
  ClientSim(EntityId id) : id_(std::move(id)) {}

  const EntityId& id() const override { return id_; }
  void handle(const MessageEnvelope& env, Scheduler& sched) override;

  ClientMode mode = ClientMode::Baseline;
  std::string page_origin;
  EntityId hsk_id;
  EntityId verifier_id;
  /// Fallback receiver for responses whose request was not seen (or whose
  /// body cannot be parsed for routing).
  EntityId default_rp;
  /// Cross-origin iframes may send auth requests only with the permission
  /// flag for that origin.
  std::set<std::string> iframe_permissions;
  std::vector<RememberCookie> cookie_jar;
  std::vector<std::string> refusals;

 private:
  EntityId id_;
  // request key (hex challenge or client-data digest) -> issuing RP
  std::map<std::string, EntityId> return_routes_;
};

}  // namespace fidosim
