#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fidosim {

using Bytes = std::vector<uint8_t>;
using ByteView = std::span<const uint8_t>;

/// 32-byte SHA-256 digest.
struct Digest {
  std::array<uint8_t, 32> bytes{};

  bool operator==(const Digest&) const = default;
  std::string hex() const;
};

/// 32-byte HMAC-SHA-256 tag.
struct MacTag {
  std::array<uint8_t, 32> bytes{};

  bool operator==(const MacTag&) const = default;
};

/// 32-byte symmetric key established by key agreement or drawn from the
/// scenario RNG. Never serialized into traces in cleartext.
struct SymmetricKey {
  std::array<uint8_t, 32> bytes{};

  bool operator==(const SymmetricKey&) const = default;
};

enum class SigAlg : uint8_t {
  WeakToy = 0,
  StrongRsa = 1,
  StrongEc = 2,
};

/// Lower rank = weaker algorithm. WeakToy has the minimum rank.
int strength_rank(SigAlg alg);
const char* to_string(SigAlg alg);
std::optional<SigAlg> sig_alg_from_string(const std::string& s);

struct KeyPair {
  SigAlg alg = SigAlg::StrongEc;
  Bytes public_key;
  Bytes private_key;
};

class UnknownAlgorithm : public std::runtime_error {
 public:
  UnknownAlgorithm() : std::runtime_error("unknown signature algorithm") {}
};

/// Deterministic RNG owned by the scenario. All challenges, keys, and
/// credential IDs are drawn from it so a (seed, config) pair fully
/// determines a run.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  void fill(std::span<uint8_t> out);
  Bytes bytes(size_t n);
  std::array<uint8_t, 32> bytes32();
  std::array<uint8_t, 16> bytes16();
  uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

Digest hash(ByteView data);
Digest hash(const std::string& s);

MacTag mac_tag(const SymmetricKey& key, ByteView data);
bool mac_verify(const SymmetricKey& key, ByteView data, const MacTag& tag);

KeyPair generate_keypair(SigAlg alg, Rng& rng);
Bytes sign(const KeyPair& kp, ByteView data);
bool verify(SigAlg alg, const Bytes& public_key, ByteView data, const Bytes& sig);

/// Produces a verifying WeakToy signature from public material alone.
/// The toy scheme (sig = hash(data || public)) is a pedagogical stand-in
/// for an exploitable legacy algorithm; it is never selected unless the
/// RP advertises it.
Bytes forge_weak(const Bytes& public_key, ByteView data);

/// X25519 key agreement used by remote attestation.
struct KexKeyPair {
  std::array<uint8_t, 32> public_key{};
  std::array<uint8_t, 32> private_key{};
};
KexKeyPair generate_kex_keypair(Rng& rng);
SymmetricKey derive_shared_key(const KexKeyPair& own, const std::array<uint8_t, 32>& peer_public);

// --- message envelope -------------------------------------------------------

enum class MsgType : uint8_t {
  RegRequest = 0,
  RegResponse = 1,
  AuthRequest = 2,
  AuthResponse = 3,
  RegAck = 4,
  Attest = 5,
  Notify = 6,
};
const char* to_string(MsgType t);

enum class EntityKind : uint8_t {
  Rp = 0,
  Client = 1,
  Hsk = 2,
  Verifier = 3,
  AttestService = 4,
  User = 5,
  Adversary = 6,
};
const char* to_string(EntityKind k);

struct EntityId {
  EntityKind kind = EntityKind::Client;
  std::string name;

  bool operator==(const EntityId&) const = default;
  auto operator<=>(const EntityId&) const = default;
  std::string str() const { return std::string(to_string(kind)) + ":" + name; }
};

/// Wire unit shared by every entity. The mac, when present, covers
/// (msg_type || payload) under the channel key for that leg.
struct MessageEnvelope {
  MsgType type = MsgType::RegRequest;
  EntityId sender;
  EntityId receiver;
  std::string origin;  // scheme+host of the page or service the message claims
  Bytes payload;
  std::optional<MacTag> mac;

  bool operator==(const MessageEnvelope&) const = default;
};

class MalformedEnvelope : public std::runtime_error {
 public:
  explicit MalformedEnvelope(const std::string& what) : std::runtime_error(what) {}
};

Bytes encode(const MessageEnvelope& env);
MessageEnvelope decode(ByteView data);
size_t encoded_size(const MessageEnvelope& env);

/// Bytes the envelope mac covers.
Bytes mac_input(const MessageEnvelope& env);
void attach_mac(MessageEnvelope& env, const SymmetricKey& key);
bool check_mac(const MessageEnvelope& env, const SymmetricKey& key);

// --- canonical field codec --------------------------------------------------
// Length-prefixed fields in declaration order, big-endian lengths, so byte
// accounting is deterministic.

class ByteWriter {
 public:
  void u8(uint8_t v) { out_.push_back(v); }
  void u16(uint16_t v);
  void u32(uint32_t v);
  void u64(uint64_t v);
  void boolean(bool v) { u8(v ? 1 : 0); }
  void raw(ByteView data) { out_.insert(out_.end(), data.begin(), data.end()); }
  template <size_t N>
  void fixed(const std::array<uint8_t, N>& a) {
    out_.insert(out_.end(), a.begin(), a.end());
  }
  void blob(ByteView data);           // u32 length prefix
  void str(const std::string& s);     // u16 length prefix

  Bytes take() { return std::move(out_); }
  const Bytes& view() const { return out_; }

 private:
  Bytes out_;
};

class ByteReader {
 public:
  explicit ByteReader(ByteView data) : data_(data) {}

  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  bool boolean() { return u8() != 0; }
  Bytes raw(size_t n);
  template <size_t N>
  std::array<uint8_t, N> fixed() {
    need(N);
    std::array<uint8_t, N> a;
    std::copy_n(data_.begin() + static_cast<long>(pos_), N, a.begin());
    pos_ += N;
    return a;
  }
  Bytes blob();
  std::string str();
  bool done() const { return pos_ == data_.size(); }
  void expect_done() const;

 private:
  void need(size_t n) const;
  ByteView data_;
  size_t pos_ = 0;
};

}  // namespace fidosim
