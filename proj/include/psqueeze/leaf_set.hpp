#pragma once

#include <bit>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace psqueeze {

/// Fixed-capacity set of leaf (row) indices backed by a word bitset.
class LeafSet {
 public:
  LeafSet() = default;
  explicit LeafSet(std::size_t capacity) : words_((capacity + 63) / 64, 0), capacity_(capacity) {}

  static LeafSet all(std::size_t capacity) {
    LeafSet s(capacity);
    for (auto& w : s.words_) w = ~std::uint64_t{0};
    s.trim();
    return s;
  }

  std::size_t capacity() const noexcept { return capacity_; }

  void insert(std::size_t i) {
    assert(i < capacity_);
    words_[i >> 6] |= std::uint64_t{1} << (i & 63);
  }
  void erase(std::size_t i) {
    assert(i < capacity_);
    words_[i >> 6] &= ~(std::uint64_t{1} << (i & 63));
  }
  bool contains(std::size_t i) const {
    return i < capacity_ && (words_[i >> 6] >> (i & 63)) & 1U;
  }

  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }
  bool empty() const noexcept {
    for (auto w : words_)
      if (w != 0) return false;
    return true;
  }

  LeafSet& operator&=(const LeafSet& o) {
    assert(o.capacity_ == capacity_);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
    return *this;
  }
  LeafSet& operator|=(const LeafSet& o) {
    assert(o.capacity_ == capacity_);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
    return *this;
  }
  friend LeafSet operator&(LeafSet a, const LeafSet& b) { return a &= b; }
  friend LeafSet operator|(LeafSet a, const LeafSet& b) { return a |= b; }

  bool is_subset_of(const LeafSet& o) const {
    assert(o.capacity_ == capacity_);
    for (std::size_t i = 0; i < words_.size(); ++i)
      if ((words_[i] & ~o.words_[i]) != 0) return false;
    return true;
  }

  /// Calls `fn(index)` for each member in increasing order.
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (std::size_t wi = 0; wi < words_.size(); ++wi) {
      std::uint64_t w = words_[wi];
      while (w != 0) {
        const int bit = std::countr_zero(w);
        fn(wi * 64 + static_cast<std::size_t>(bit));
        w &= w - 1;
      }
    }
  }

  std::vector<std::size_t> to_vector() const {
    std::vector<std::size_t> out;
    out.reserve(count());
    for_each([&](std::size_t i) { out.push_back(i); });
    return out;
  }

  friend bool operator==(const LeafSet&, const LeafSet&) = default;

 private:
  void trim() {
    if (capacity_ % 64 != 0 && !words_.empty())
      words_.back() &= (std::uint64_t{1} << (capacity_ % 64)) - 1;
  }

  std::vector<std::uint64_t> words_;
  std::size_t capacity_ = 0;
};

}  // namespace psqueeze
