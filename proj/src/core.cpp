#include "fidosim/core.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <algorithm>
#include <cstring>
#include <memory>

namespace fidosim {

namespace {

struct PkeyDeleter {
  void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};
struct PkeyCtxDeleter {
  void operator()(EVP_PKEY_CTX* c) const { EVP_PKEY_CTX_free(c); }
};
using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDeleter>;

PkeyPtr ed25519_private(ByteView seed) {
  PkeyPtr k(EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr, seed.data(), seed.size()));
  if (!k) throw std::runtime_error("ed25519 key import failed");
  return k;
}

// Strong algorithms share one underlying primitive; signatures are
// domain-separated by the algorithm id so a key never verifies under
// another algorithm label.
Bytes strong_message(SigAlg alg, ByteView data) {
  Bytes m;
  m.reserve(data.size() + 1);
  m.push_back(static_cast<uint8_t>(alg));
  m.insert(m.end(), data.begin(), data.end());
  return m;
}

constexpr char kHex[] = "0123456789abcdef";

}  // namespace

std::string Digest::hex() const {
  std::string s;
  s.reserve(64);
  for (uint8_t b : bytes) {
    s.push_back(kHex[b >> 4]);
    s.push_back(kHex[b & 0xf]);
  }
  return s;
}

int strength_rank(SigAlg alg) {
  switch (alg) {
    case SigAlg::WeakToy: return 0;
    case SigAlg::StrongRsa: return 1;
    case SigAlg::StrongEc: return 2;
  }
  throw UnknownAlgorithm();
}

const char* to_string(SigAlg alg) {
  switch (alg) {
    case SigAlg::WeakToy: return "WEAK_TOY";
    case SigAlg::StrongRsa: return "STRONG_RSA";
    case SigAlg::StrongEc: return "STRONG_EC";
  }
  return "?";
}

std::optional<SigAlg> sig_alg_from_string(const std::string& s) {
  if (s == "WEAK_TOY") return SigAlg::WeakToy;
  if (s == "STRONG_RSA") return SigAlg::StrongRsa;
  if (s == "STRONG_EC") return SigAlg::StrongEc;
  return std::nullopt;
}

void Rng::fill(std::span<uint8_t> out) {
  size_t i = 0;
  while (i < out.size()) {
    uint64_t v = engine_();
    for (int b = 0; b < 8 && i < out.size(); ++b, ++i) {
      out[i] = static_cast<uint8_t>(v >> (8 * b));
    }
  }
}

Bytes Rng::bytes(size_t n) {
  Bytes b(n);
  fill(b);
  return b;
}

std::array<uint8_t, 32> Rng::bytes32() {
  std::array<uint8_t, 32> a;
  fill(a);
  return a;
}

std::array<uint8_t, 16> Rng::bytes16() {
  std::array<uint8_t, 16> a;
  fill(a);
  return a;
}

Digest hash(ByteView data) {
  Digest d;
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), d.bytes.data(), &len, EVP_sha256(), nullptr);
  return d;
}

Digest hash(const std::string& s) {
  return hash(ByteView(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

MacTag mac_tag(const SymmetricKey& key, ByteView data) {
  MacTag t;
  unsigned int len = 0;
  HMAC(EVP_sha256(), key.bytes.data(), static_cast<int>(key.bytes.size()), data.data(),
       data.size(), t.bytes.data(), &len);
  return t;
}

bool mac_verify(const SymmetricKey& key, ByteView data, const MacTag& tag) {
  return mac_tag(key, data) == tag;
}

KeyPair generate_keypair(SigAlg alg, Rng& rng) {
  KeyPair kp;
  kp.alg = alg;
  auto seed = rng.bytes32();
  kp.private_key.assign(seed.begin(), seed.end());
  switch (alg) {
    case SigAlg::StrongEc:
    case SigAlg::StrongRsa: {
      auto key = ed25519_private(kp.private_key);
      kp.public_key.resize(32);
      size_t publen = 32;
      EVP_PKEY_get_raw_public_key(key.get(), kp.public_key.data(), &publen);
      break;
    }
    case SigAlg::WeakToy: {
      // Public value derived from the private seed; signatures never use it.
      Bytes m = strong_message(alg, kp.private_key);
      Digest d = hash(m);
      kp.public_key.assign(d.bytes.begin(), d.bytes.end());
      break;
    }
    default:
      throw UnknownAlgorithm();
  }
  return kp;
}

Bytes sign(const KeyPair& kp, ByteView data) {
  switch (kp.alg) {
    case SigAlg::StrongEc:
    case SigAlg::StrongRsa: {
      auto key = ed25519_private(kp.private_key);
      MdCtxPtr ctx(EVP_MD_CTX_new());
      if (EVP_DigestSignInit(ctx.get(), nullptr, nullptr, nullptr, key.get()) != 1)
        throw std::runtime_error("sign init failed");
      Bytes m = strong_message(kp.alg, data);
      Bytes sig(64);
      size_t siglen = sig.size();
      if (EVP_DigestSign(ctx.get(), sig.data(), &siglen, m.data(), m.size()) != 1)
        throw std::runtime_error("sign failed");
      sig.resize(siglen);
      return sig;
    }
    case SigAlg::WeakToy:
      return forge_weak(kp.public_key, data);
  }
  throw UnknownAlgorithm();
}

bool verify(SigAlg alg, const Bytes& public_key, ByteView data, const Bytes& sig) {
  switch (alg) {
    case SigAlg::StrongEc:
    case SigAlg::StrongRsa: {
      if (public_key.size() != 32 || sig.size() != 64) return false;
      PkeyPtr key(EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr, public_key.data(),
                                              public_key.size()));
      if (!key) return false;
      MdCtxPtr ctx(EVP_MD_CTX_new());
      if (EVP_DigestVerifyInit(ctx.get(), nullptr, nullptr, nullptr, key.get()) != 1)
        return false;
      Bytes m = strong_message(alg, data);
      return EVP_DigestVerify(ctx.get(), sig.data(), sig.size(), m.data(), m.size()) == 1;
    }
    case SigAlg::WeakToy: {
      return sig == forge_weak(public_key, data);
    }
  }
  throw UnknownAlgorithm();
}

Bytes forge_weak(const Bytes& public_key, ByteView data) {
  Bytes m;
  m.reserve(data.size() + public_key.size());
  m.insert(m.end(), data.begin(), data.end());
  m.insert(m.end(), public_key.begin(), public_key.end());
  Digest d = hash(m);
  return Bytes(d.bytes.begin(), d.bytes.end());
}

KexKeyPair generate_kex_keypair(Rng& rng) {
  KexKeyPair kp;
  kp.private_key = rng.bytes32();
  PkeyPtr key(EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, kp.private_key.data(), 32));
  if (!key) throw std::runtime_error("x25519 key import failed");
  size_t publen = 32;
  EVP_PKEY_get_raw_public_key(key.get(), kp.public_key.data(), &publen);
  return kp;
}

SymmetricKey derive_shared_key(const KexKeyPair& own, const std::array<uint8_t, 32>& peer_public) {
  PkeyPtr priv(EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, own.private_key.data(), 32));
  PkeyPtr peer(EVP_PKEY_new_raw_public_key(EVP_PKEY_X25519, nullptr, peer_public.data(), 32));
  if (!priv || !peer) throw std::runtime_error("x25519 key import failed");
  PkeyCtxPtr ctx(EVP_PKEY_CTX_new(priv.get(), nullptr));
  std::array<uint8_t, 32> secret{};
  size_t len = secret.size();
  if (EVP_PKEY_derive_init(ctx.get()) != 1 ||
      EVP_PKEY_derive_set_peer(ctx.get(), peer.get()) != 1 ||
      EVP_PKEY_derive(ctx.get(), secret.data(), &len) != 1)
    throw std::runtime_error("x25519 derive failed");
  // KDF step: raw shared secret never used directly as a channel key.
  SymmetricKey key;
  key.bytes = hash(ByteView(secret.data(), secret.size())).bytes;
  return key;
}

const char* to_string(MsgType t) {
  switch (t) {
    case MsgType::RegRequest: return "REG_REQUEST";
    case MsgType::RegResponse: return "REG_RESPONSE";
    case MsgType::AuthRequest: return "AUTH_REQUEST";
    case MsgType::AuthResponse: return "AUTH_RESPONSE";
    case MsgType::RegAck: return "REG_ACK";
    case MsgType::Attest: return "ATTEST";
    case MsgType::Notify: return "NOTIFY";
  }
  return "?";
}

const char* to_string(EntityKind k) {
  switch (k) {
    case EntityKind::Rp: return "RP";
    case EntityKind::Client: return "CLIENT";
    case EntityKind::Hsk: return "HSK";
    case EntityKind::Verifier: return "VERIFIER";
    case EntityKind::AttestService: return "ATTEST_SERVICE";
    case EntityKind::User: return "USER";
    case EntityKind::Adversary: return "ADVERSARY";
  }
  return "?";
}

void ByteWriter::u16(uint16_t v) {
  u8(static_cast<uint8_t>(v >> 8));
  u8(static_cast<uint8_t>(v));
}

void ByteWriter::u32(uint32_t v) {
  u16(static_cast<uint16_t>(v >> 16));
  u16(static_cast<uint16_t>(v));
}

void ByteWriter::u64(uint64_t v) {
  u32(static_cast<uint32_t>(v >> 32));
  u32(static_cast<uint32_t>(v));
}

void ByteWriter::blob(ByteView data) {
  u32(static_cast<uint32_t>(data.size()));
  raw(data);
}

void ByteWriter::str(const std::string& s) {
  if (s.size() > 0xffff) throw std::length_error("string field too long");
  u16(static_cast<uint16_t>(s.size()));
  raw(ByteView(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

void ByteReader::need(size_t n) const {
  if (pos_ + n > data_.size()) throw MalformedEnvelope("truncated input");
}

uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

uint16_t ByteReader::u16() {
  uint16_t hi = u8();
  return static_cast<uint16_t>((hi << 8) | u8());
}

uint32_t ByteReader::u32() {
  uint32_t hi = u16();
  return (hi << 16) | u16();
}

uint64_t ByteReader::u64() {
  uint64_t hi = u32();
  return (hi << 32) | u32();
}

Bytes ByteReader::raw(size_t n) {
  need(n);
  Bytes b(data_.begin() + static_cast<long>(pos_), data_.begin() + static_cast<long>(pos_ + n));
  pos_ += n;
  return b;
}

Bytes ByteReader::blob() { return raw(u32()); }

std::string ByteReader::str() {
  size_t n = u16();
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data()) + pos_, n);
  pos_ += n;
  return s;
}

void ByteReader::expect_done() const {
  if (!done()) throw MalformedEnvelope("trailing bytes");
}

namespace {

void write_entity(ByteWriter& w, const EntityId& id) {
  w.u8(static_cast<uint8_t>(id.kind));
  w.str(id.name);
}

EntityId read_entity(ByteReader& r) {
  uint8_t k = r.u8();
  if (k > static_cast<uint8_t>(EntityKind::Adversary)) throw MalformedEnvelope("bad entity kind");
  EntityId id;
  id.kind = static_cast<EntityKind>(k);
  id.name = r.str();
  return id;
}

}  // namespace

Bytes encode(const MessageEnvelope& env) {
  ByteWriter w;
  w.u8(static_cast<uint8_t>(env.type));
  write_entity(w, env.sender);
  write_entity(w, env.receiver);
  w.str(env.origin);
  w.blob(env.payload);
  w.boolean(env.mac.has_value());
  if (env.mac) w.fixed(env.mac->bytes);
  return w.take();
}

MessageEnvelope decode(ByteView data) {
  ByteReader r(data);
  MessageEnvelope env;
  uint8_t t = r.u8();
  if (t > static_cast<uint8_t>(MsgType::Notify)) throw MalformedEnvelope("bad msg type");
  env.type = static_cast<MsgType>(t);
  env.sender = read_entity(r);
  env.receiver = read_entity(r);
  env.origin = r.str();
  env.payload = r.blob();
  uint8_t has_mac = r.u8();
  if (has_mac > 1) throw MalformedEnvelope("bad mac flag");
  if (has_mac) {
    MacTag tag;
    tag.bytes = r.fixed<32>();
    env.mac = tag;
  }
  r.expect_done();
  return env;
}

size_t encoded_size(const MessageEnvelope& env) {
  // fixed header + name/origin strings + payload + optional 32-byte mac
  return 1 + (1 + 2 + env.sender.name.size()) + (1 + 2 + env.receiver.name.size()) +
         (2 + env.origin.size()) + (4 + env.payload.size()) + 1 + (env.mac ? 32 : 0);
}

Bytes mac_input(const MessageEnvelope& env) {
  Bytes b;
  b.reserve(env.payload.size() + 1);
  b.push_back(static_cast<uint8_t>(env.type));
  b.insert(b.end(), env.payload.begin(), env.payload.end());
  return b;
}

void attach_mac(MessageEnvelope& env, const SymmetricKey& key) {
  env.mac = mac_tag(key, mac_input(env));
}

bool check_mac(const MessageEnvelope& env, const SymmetricKey& key) {
  return env.mac.has_value() && mac_verify(key, mac_input(env), *env.mac);
}

}  // namespace fidosim
