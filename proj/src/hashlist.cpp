#include "fidosim/hashlist.hpp"

#include <algorithm>

namespace fidosim {

void HashListState::add(const Digest& d) {
  entries_.push_back(d);
  while (entries_.size() > capacity_) {
    evictions_.push_back(entries_.front());
    entries_.pop_front();
  }
}

bool HashListState::contains(const Digest& d) const {
  return std::find(entries_.begin(), entries_.end(), d) != entries_.end();
}

HashListState::Result HashListState::consume(const Digest& returned) {
  if (!contains(returned)) return Result::CloneDetected;
  // Remove from the head up to and including the match; earlier entries
  // belong to requests or responses that were lost in transit.
  while (true) {
    Digest head = entries_.front();
    entries_.pop_front();
    if (head == returned) break;
  }
  return Result::Ok;
}

void HskChallengeSlot::on_registration(const std::array<uint8_t, 32>& challenge) {
  hash_c_ = hash(ByteView(challenge.data(), challenge.size()));
}

Digest HskChallengeSlot::on_authentication(const std::array<uint8_t, 32>& challenge) {
  if (!hash_c_) throw UninitializedSlot();
  Digest previous = *hash_c_;
  hash_c_ = hash(ByteView(challenge.data(), challenge.size()));
  return previous;
}

}  // namespace fidosim
