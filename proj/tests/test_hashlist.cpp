#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fidosim/hashlist.hpp"

using namespace fidosim;

namespace {

Digest d(uint8_t tag) {
  Digest out;
  out.bytes.fill(tag);
  return out;
}

std::array<uint8_t, 32> challenge(uint8_t tag) {
  std::array<uint8_t, 32> c{};
  c.fill(tag);
  return c;
}

Digest challenge_hash(uint8_t tag) {
  auto c = challenge(tag);
  return hash(ByteView(c.data(), c.size()));
}

}  // namespace

TEST_CASE("consume removes everything up to and including the match") {
  HashListState list;
  list.add(d(1));
  list.add(d(2));
  list.add(d(3));
  list.add(d(4));

  CHECK(list.consume(d(3)) == HashListState::Result::Ok);
  CHECK(list.size() == 1);
  CHECK(list.contains(d(4)));
  CHECK_FALSE(list.contains(d(1)));
}

TEST_CASE("a miss leaves the list unchanged") {
  HashListState list;
  list.add(d(1));
  list.add(d(2));
  CHECK(list.consume(d(9)) == HashListState::Result::CloneDetected);
  CHECK(list.size() == 2);
  CHECK(list.contains(d(1)));
  CHECK(list.contains(d(2)));
}

TEST_CASE("an entry is consumable exactly once") {
  HashListState list;
  list.add(d(1));
  CHECK(list.consume(d(1)) == HashListState::Result::Ok);
  CHECK(list.consume(d(1)) == HashListState::Result::CloneDetected);
}

TEST_CASE("capacity eviction is surfaced") {
  HashListState list(4);
  for (uint8_t i = 0; i < 6; ++i) list.add(d(i));
  CHECK(list.size() == 4);
  REQUIRE(list.evictions().size() == 2);
  CHECK(list.evictions()[0] == d(0));
  CHECK(list.evictions()[1] == d(1));
}

TEST_CASE("slot returns the previous hash and stores the new one") {
  HskChallengeSlot slot;
  CHECK_FALSE(slot.initialized());
  slot.on_registration(challenge(1));
  REQUIRE(slot.initialized());
  CHECK(*slot.current() == challenge_hash(1));

  Digest prev = slot.on_authentication(challenge(2));
  CHECK(prev == challenge_hash(1));
  CHECK(*slot.current() == challenge_hash(2));
}

TEST_CASE("slot restore reinstates persisted state") {
  HskChallengeSlot slot;
  slot.restore(challenge_hash(7));
  CHECK(slot.initialized());
  CHECK(slot.on_authentication(challenge(8)) == challenge_hash(7));
  slot.restore(std::nullopt);
  CHECK_FALSE(slot.initialized());
}

// Reference pairing of one RP-side list with one device slot: each round
// sends a fresh challenge, optionally loses the request or the response.
struct Exchange {
  HashListState list;
  HskChallengeSlot device;
  uint8_t next_tag = 0;

  Exchange() { register_device(); }

  void register_device() {
    device.on_registration(challenge(next_tag));
    list.add(challenge_hash(next_tag));
    ++next_tag;
  }

  HashListState::Result round(bool drop_request, bool drop_response) {
    auto c = challenge(next_tag++);
    list.add(hash(ByteView(c.data(), c.size())));
    if (drop_request) return HashListState::Result::Ok;
    Digest returned = device.on_authentication(c);
    if (drop_response) return HashListState::Result::Ok;
    return list.consume(returned);
  }
};

TEST_CASE("no false positives under any loss pattern, chains of length 6") {
  for (unsigned pattern = 0; pattern < (1u << 12); ++pattern) {
    Exchange ex;
    for (int round = 0; round < 6; ++round) {
      bool drop_req = (pattern >> (2 * round)) & 1;
      bool drop_resp = (pattern >> (2 * round + 1)) & 1;
      REQUIRE(ex.round(drop_req, drop_resp) == HashListState::Result::Ok);
    }
  }
}

TEST_CASE("randomized long chains with loss stay clean") {
  std::mt19937_64 gen(1234);
  for (int trial = 0; trial < 200; ++trial) {
    Exchange ex;
    int rounds = 1 + static_cast<int>(gen() % 40);
    for (int i = 0; i < rounds; ++i) {
      CHECK(ex.round(gen() % 4 == 0, gen() % 4 == 0) == HashListState::Result::Ok);
    }
  }
}

TEST_CASE("a cloned slot is caught at the victim's next exchange") {
  Exchange ex;
  ex.round(false, false);
  HskChallengeSlot cloned = ex.device;  // physical clone of the stored hash

  // the clone answers one authentication, consuming the shared hash
  auto c = challenge(ex.next_tag++);
  ex.list.add(hash(ByteView(c.data(), c.size())));
  CHECK(ex.list.consume(cloned.on_authentication(c)) == HashListState::Result::Ok);

  // the victim's device still holds the consumed hash
  CHECK(ex.round(false, false) == HashListState::Result::CloneDetected);
}

TEST_CASE("random digests are never accepted") {
  HashListState list;
  for (uint8_t i = 0; i < 10; ++i) list.add(d(i));
  std::mt19937_64 gen(99);
  for (int i = 0; i < 2000; ++i) {
    Digest random;
    for (auto& b : random.bytes) b = static_cast<uint8_t>(gen());
    CHECK(list.consume(random) == HashListState::Result::CloneDetected);
  }
  CHECK(list.size() == 10);
}

TEST_CASE("uninitialized slot refuses authentication") {
  HskChallengeSlot slot;
  CHECK_THROWS_AS(slot.on_authentication(challenge(1)), UninitializedSlot);
}
