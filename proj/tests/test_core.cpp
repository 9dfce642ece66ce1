#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fidosim/core.hpp"

using namespace fidosim;

TEST_CASE("sha256 known vectors") {
  CHECK(hash(ByteView{}).hex() ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(hash(std::string("abc")).hex() ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(hash(std::string("abc")) == hash(std::string("abc")));
  CHECK(hash(std::string("abc")) != hash(std::string("abd")));
}

TEST_CASE("rng is deterministic per seed") {
  Rng a(42), b(42), c(43);
  CHECK(a.bytes(16) == b.bytes(16));
  CHECK(a.bytes32() == b.bytes32());
  Rng a2(42);
  CHECK(a2.bytes(16) != c.bytes(16));
}

TEST_CASE("hmac accept and reject") {
  Rng rng(1);
  SymmetricKey k1{rng.bytes32()};
  SymmetricKey k2{rng.bytes32()};
  Bytes msg = rng.bytes(40);

  MacTag tag = mac_tag(k1, msg);
  CHECK(mac_verify(k1, msg, tag));
  CHECK_FALSE(mac_verify(k2, msg, tag));

  Bytes flipped = msg;
  flipped[7] ^= 0x10;
  CHECK_FALSE(mac_verify(k1, flipped, tag));
}

TEST_CASE("strong signatures verify and do not cross algorithms") {
  Rng rng(2);
  Bytes msg = rng.bytes(64);
  for (SigAlg alg : {SigAlg::StrongEc, SigAlg::StrongRsa}) {
    KeyPair kp = generate_keypair(alg, rng);
    Bytes sig = sign(kp, msg);
    CHECK(verify(alg, kp.public_key, msg, sig));
    Bytes other = msg;
    other[0] ^= 1;
    CHECK_FALSE(verify(alg, kp.public_key, other, sig));
  }
  // the two strong schemes are domain separated: a signature under one
  // identity must not verify under the other label
  KeyPair ec = generate_keypair(SigAlg::StrongEc, rng);
  Bytes sig = sign(ec, msg);
  CHECK_FALSE(verify(SigAlg::StrongRsa, ec.public_key, msg, sig));
}

TEST_CASE("weak toy scheme is forgeable from the public key alone") {
  Rng rng(3);
  KeyPair kp = generate_keypair(SigAlg::WeakToy, rng);
  Bytes msg = rng.bytes(32);
  Bytes forged = forge_weak(kp.public_key, msg);
  CHECK(forged == sign(kp, msg));
  CHECK(verify(SigAlg::WeakToy, kp.public_key, msg, forged));
}

TEST_CASE("x25519 agreement matches on both sides") {
  Rng rng(4);
  KexKeyPair a = generate_kex_keypair(rng);
  KexKeyPair b = generate_kex_keypair(rng);
  CHECK(derive_shared_key(a, b.public_key) == derive_shared_key(b, a.public_key));
  KexKeyPair c = generate_kex_keypair(rng);
  CHECK_FALSE(derive_shared_key(a, b.public_key) == derive_shared_key(a, c.public_key));
}

TEST_CASE("envelope codec round trip") {
  Rng rng(5);
  MessageEnvelope env;
  env.type = MsgType::AuthRequest;
  env.sender = {EntityKind::Rp, "rp"};
  env.receiver = {EntityKind::Client, "webauthn"};
  env.origin = "https://example";
  env.payload = rng.bytes(20);

  MessageEnvelope back = decode(encode(env));
  CHECK(back == env);
  CHECK(encode(env).size() == encoded_size(env));

  SymmetricKey k{rng.bytes32()};
  attach_mac(env, k);
  CHECK(check_mac(env, k));
  CHECK(decode(encode(env)) == env);
  CHECK(encoded_size(env) == encode(env).size());
}

TEST_CASE("mac adds exactly 32 bytes on the wire") {
  MessageEnvelope env;
  env.sender = {EntityKind::Rp, "rp"};
  env.receiver = {EntityKind::Client, "webauthn"};
  env.payload = Bytes(10, 0xab);
  size_t bare = encoded_size(env);
  Rng rng(6);
  attach_mac(env, SymmetricKey{rng.bytes32()});
  CHECK(encoded_size(env) == bare + 32);
}

TEST_CASE("mac covers type and payload") {
  Rng rng(7);
  SymmetricKey k{rng.bytes32()};
  MessageEnvelope env;
  env.type = MsgType::RegResponse;
  env.payload = rng.bytes(12);
  attach_mac(env, k);

  MessageEnvelope wrong_type = env;
  wrong_type.type = MsgType::AuthResponse;
  CHECK_FALSE(check_mac(wrong_type, k));

  MessageEnvelope wrong_payload = env;
  wrong_payload.payload[3] ^= 0x80;
  CHECK_FALSE(check_mac(wrong_payload, k));

  // sender and origin are routing metadata, not covered
  MessageEnvelope rerouted = env;
  rerouted.origin = "https://elsewhere";
  CHECK(check_mac(rerouted, k));
}

TEST_CASE("malformed envelopes are rejected") {
  CHECK_THROWS_AS(decode(Bytes{}), MalformedEnvelope);
  CHECK_THROWS_AS(decode(Bytes{0xff, 0x00}), MalformedEnvelope);

  MessageEnvelope env;
  env.sender = {EntityKind::Rp, "rp"};
  env.receiver = {EntityKind::Hsk, "hsk"};
  Bytes good = encode(env);
  good.pop_back();  // truncated
  CHECK_THROWS_AS(decode(good), MalformedEnvelope);
}

TEST_CASE("byte codec primitives") {
  ByteWriter w;
  w.u8(0x01);
  w.u16(0x0203);
  w.u32(0x04050607);
  w.u64(0x08090a0b0c0d0e0fULL);
  w.boolean(true);
  w.str("hi");
  w.blob(Bytes{0xaa, 0xbb});
  Bytes data = w.take();

  ByteReader r(data);
  CHECK(r.u8() == 0x01);
  CHECK(r.u16() == 0x0203);
  CHECK(r.u32() == 0x04050607);
  CHECK(r.u64() == 0x08090a0b0c0d0e0fULL);
  CHECK(r.boolean());
  CHECK(r.str() == "hi");
  CHECK(r.blob() == Bytes{0xaa, 0xbb});
  CHECK(r.done());
  CHECK_NOTHROW(r.expect_done());

  ByteReader short_read(data);
  short_read.u8();
  CHECK_THROWS_AS(short_read.expect_done(), MalformedEnvelope);
}

TEST_CASE("algorithm strength ordering") {
  CHECK(strength_rank(SigAlg::WeakToy) < strength_rank(SigAlg::StrongRsa));
  CHECK(strength_rank(SigAlg::StrongRsa) < strength_rank(SigAlg::StrongEc));
  CHECK(sig_alg_from_string("STRONG_EC") == SigAlg::StrongEc);
  CHECK_FALSE(sig_alg_from_string("nope").has_value());
}
