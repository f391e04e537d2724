#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace hqi {

// Fixed-length bit vector used as a selection mask over a tuple scope.
// Bit i corresponds to the i-th tuple of the scope the mask was built for.
class Bitmap {
 public:
  Bitmap() = default;
  explicit Bitmap(std::size_t size, bool value = false)
      : size_(size), words_(word_count(size), value ? ~0ull : 0ull) {
    trim();
  }

  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  bool test(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
  void set(std::size_t i) { words_[i >> 6] |= 1ull << (i & 63); }
  void reset(std::size_t i) { words_[i >> 6] &= ~(1ull << (i & 63)); }
  void assign(std::size_t i, bool v) { v ? set(i) : reset(i); }

  std::size_t count() const {
    std::size_t c = 0;
    for (std::uint64_t w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }
  bool any() const {
    for (std::uint64_t w : words_)
      if (w) return true;
    return false;
  }

  Bitmap& operator&=(const Bitmap& o) {
    check_same_size(o);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
    return *this;
  }
  Bitmap& operator|=(const Bitmap& o) {
    check_same_size(o);
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
    return *this;
  }
  // Complement within [0, size).
  Bitmap& flip() {
    for (auto& w : words_) w = ~w;
    trim();
    return *this;
  }

  // popcount(*this & o) without materializing the intersection.
  std::size_t and_count(const Bitmap& o) const {
    check_same_size(o);
    std::size_t c = 0;
    for (std::size_t i = 0; i < words_.size(); ++i)
      c += static_cast<std::size_t>(std::popcount(words_[i] & o.words_[i]));
    return c;
  }
  // popcount(*this & ~o), i.e. bits set here but not in o.
  std::size_t andnot_count(const Bitmap& o) const {
    check_same_size(o);
    std::size_t c = 0;
    for (std::size_t i = 0; i < words_.size(); ++i)
      c += static_cast<std::size_t>(std::popcount(words_[i] & ~o.words_[i]));
    return c;
  }

  std::vector<std::uint32_t> to_positions() const {
    std::vector<std::uint32_t> out;
    out.reserve(count());
    for (std::size_t w = 0; w < words_.size(); ++w) {
      std::uint64_t bits = words_[w];
      while (bits) {
        const int b = std::countr_zero(bits);
        out.push_back(static_cast<std::uint32_t>(w * 64 + static_cast<std::size_t>(b)));
        bits &= bits - 1;
      }
    }
    return out;
  }

  friend bool operator==(const Bitmap& a, const Bitmap& b) = default;

  const std::vector<std::uint64_t>& words() const { return words_; }

 private:
  static std::size_t word_count(std::size_t n) { return (n + 63) / 64; }
  void trim() {
    if (size_ % 64 != 0 && !words_.empty())
      words_.back() &= (1ull << (size_ % 64)) - 1;
  }
  void check_same_size(const Bitmap& o) const {
    if (size_ != o.size_) throw std::invalid_argument("bitmap size mismatch");
  }

  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

}  // namespace hqi
