#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

namespace hqi {

struct Neighbor {
  float score;      // smaller is better (see distance.hpp)
  std::int64_t id;  // tuple id

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

// Total order on results: ascending score, ties broken by smaller tuple id.
inline bool better(const Neighbor& a, const Neighbor& b) {
  return a.score < b.score || (a.score == b.score && a.id < b.id);
}

// Bounded heap keeping the k best neighbors seen, worst at the top. Because
// `better` is a total order, the retained set is independent of push order.
class TopKHeap {
 public:
  explicit TopKHeap(std::size_t k = 0) : cap_(k) {}

  void push(Neighbor n) {
    if (cap_ == 0) return;
    if (heap_.size() < cap_) {
      heap_.push_back(n);
      std::push_heap(heap_.begin(), heap_.end(), better);
    } else if (better(n, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), better);
      heap_.back() = n;
      std::push_heap(heap_.begin(), heap_.end(), better);
    }
  }

  // Cheap score-only pre-test; equal scores must still be pushed because the
  // id tie-break can evict the current worst.
  float worst_score() const {
    return heap_.size() < cap_ ? std::numeric_limits<float>::infinity()
                               : heap_.front().score;
  }

  std::size_t size() const { return heap_.size(); }
  std::size_t capacity() const { return cap_; }

  // Best-first; leaves the heap empty.
  std::vector<Neighbor> take_sorted() {
    std::sort_heap(heap_.begin(), heap_.end(), better);
    return std::move(heap_);
  }

 private:
  std::size_t cap_;
  std::vector<Neighbor> heap_;
};

// One bounded heap per query of a batch (Algorithm 3 keeps exactly this shape:
// |Q| heaps of capacity k, filled as posting-list blocks are scanned).
class ResultsHeap {
 public:
  ResultsHeap(std::size_t num_results, std::size_t k)
      : heaps_(num_results, TopKHeap(k)) {}

  TopKHeap& operator[](std::size_t q) { return heaps_[q]; }
  const TopKHeap& operator[](std::size_t q) const { return heaps_[q]; }
  std::size_t size() const { return heaps_.size(); }

  std::vector<std::vector<Neighbor>> take_all_sorted() {
    std::vector<std::vector<Neighbor>> out(heaps_.size());
    for (std::size_t i = 0; i < heaps_.size(); ++i) out[i] = heaps_[i].take_sorted();
    return out;
  }

 private:
  std::vector<TopKHeap> heaps_;
};

}  // namespace hqi
