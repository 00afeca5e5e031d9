#pragma once

#include <deque>
#include <functional>

#include "spikediff/tensor.hpp"

namespace spikediff {

struct Val {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Wengert-list reverse-mode tape. Every primitive appends one record whose
// pull closure maps the output gradient to input-gradient accumulations.
// The primitive set is closed: each backward rule is hand-derived in ops.cpp
// (the spike nonlinearity substitutes its surrogate derivative there).
template <typename T>
class TapeT {
 public:
  using PullFn = std::function<void(TapeT&, const TensorT<T>&)>;

  explicit TapeT(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  // Registers a value that was not produced by a primitive. Parameters are
  // leaves with requires_grad=true; detached constants with false.
  Val leaf(TensorT<T> v, bool requires_grad = false) {
    entries_.push_back(Entry{std::move(v), TensorT<T>(), requires_grad, false});
    return Val{static_cast<int32_t>(entries_.size() - 1)};
  }

  // Appends an op record. `pull` is dropped when recording is off.
  Val emit(TensorT<T> out, PullFn pull, bool out_requires_grad) {
    Val v = leaf(std::move(out), out_requires_grad && recording_);
    if (recording_ && out_requires_grad)
      nodes_.push_back(Node{v.id, std::move(pull)});
    return v;
  }

  const TensorT<T>& value(Val v) const { return entry(v).value; }

  bool requires_grad(Val v) const { return entry(v).requires_grad; }

  bool has_grad(Val v) const { return entry(v).has_grad; }

  // Zero tensor when no gradient reached v (documented: not an error).
  TensorT<T> grad(Val v) const {
    const Entry& e = entry(v);
    if (!e.has_grad) return TensorT<T>::zeros(e.value.shape);
    return e.grad;
  }

  void accumulate(Val v, const TensorT<T>& g) {
    Entry& e = entry(v);
    SPD_REQUIRE(g.shape == e.value.shape, "tape: gradient shape ", shape_str(g.shape),
                " does not match value shape ", shape_str(e.value.shape));
    if (!e.has_grad) {
      e.grad = g;
      e.has_grad = true;
    } else {
      for (int64_t i = 0; i < g.numel(); ++i) e.grad[i] += g[i];
    }
  }
  void accumulate(Val v, TensorT<T>&& g) {
    Entry& e = entry(v);
    if (!e.has_grad) {
      SPD_REQUIRE(g.shape == e.value.shape, "tape: gradient shape ", shape_str(g.shape),
                  " does not match value shape ", shape_str(e.value.shape));
      e.grad = std::move(g);
      e.has_grad = true;
    } else {
      accumulate(v, static_cast<const TensorT<T>&>(g));
    }
  }

  // Reverse sweep from a scalar loss. Records are replayed in strict reverse
  // order of creation.
  void backward(Val loss) {
    SPD_REQUIRE(recording_, "tape: backward on a non-recording tape");
    Entry& e = entry(loss);
    SPD_REQUIRE(e.value.numel() == 1, "tape: loss must be scalar, got shape ",
                shape_str(e.value.shape));
    accumulate(loss, TensorT<T>::full(e.value.shape, T(1)));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Entry& out = entries_[static_cast<size_t>(it->out)];
      if (!out.has_grad) continue;  // unused branch: gradients stay zero
      it->pull(*this, out.grad);
    }
  }

  void reset() {
    entries_.clear();
    nodes_.clear();
  }

  size_t num_records() const { return nodes_.size(); }
  size_t num_values() const { return entries_.size(); }

 private:
  struct Entry {
    TensorT<T> value;
    TensorT<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
  };
  struct Node {
    int32_t out;
    PullFn pull;
  };

  const Entry& entry(Val v) const {
    SPD_REQUIRE(v.valid() && v.id < static_cast<int32_t>(entries_.size()),
                "tape: invalid value handle");
    return entries_[static_cast<size_t>(v.id)];
  }
  Entry& entry(Val v) {
    SPD_REQUIRE(v.valid() && v.id < static_cast<int32_t>(entries_.size()),
                "tape: invalid value handle");
    return entries_[static_cast<size_t>(v.id)];
  }

  // deque: entries stay at stable addresses, so references returned by
  // value() survive later emits
  std::deque<Entry> entries_;
  std::vector<Node> nodes_;
  bool recording_;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

}  // namespace spikediff
