#pragma once

#include <deque>
#include <optional>
#include <vector>

#include "fidosim/core.hpp"

namespace fidosim {

/// RP-side ordered list of hashed challenges, head = oldest. Every entry
/// was produced from a challenge this RP actually sent. A returned hash is
/// consumable once: the match trims the head of the list up to and
/// including it, which tolerates lost requests and responses.
class HashListState {
 public:
  enum class Result { Ok, CloneDetected };

  explicit HashListState(size_t capacity = 1024) : capacity_(capacity) {}

  /// Append at tail (registration completion or authentication send).
  void add(const Digest& d);

  /// Consume a hash returned by the HSK. On a miss the list is unchanged.
  Result consume(const Digest& returned);

  bool contains(const Digest& d) const;
  size_t size() const { return entries_.size(); }
  const std::deque<Digest>& entries() const { return entries_; }

  /// Entries evicted by the capacity cap; an evicted unanswered challenge
  /// could later cause a false positive, so evictions are surfaced.
  const std::vector<Digest>& evictions() const { return evictions_; }

 private:
  std::deque<Digest> entries_;
  std::vector<Digest> evictions_;
  size_t capacity_;
};

class UninitializedSlot : public std::runtime_error {
 public:
  UninitializedSlot() : std::runtime_error("challenge slot not initialized by a registration") {}
};

/// HSK-side stored hash of the most recent challenge processed for a
/// credential.
class HskChallengeSlot {
 public:
  void on_registration(const std::array<uint8_t, 32>& challenge);

  /// Returns the previous stored hash (embedded in the response) and
  /// stores the hash of the new challenge.
  Digest on_authentication(const std::array<uint8_t, 32>& challenge);

  bool initialized() const { return hash_c_.has_value(); }
  const std::optional<Digest>& current() const { return hash_c_; }

  /// Reinstates a stored hash, e.g. when unsealing persisted state.
  void restore(const std::optional<Digest>& h) { hash_c_ = h; }

 private:
  std::optional<Digest> hash_c_;
};

}  // namespace fidosim
