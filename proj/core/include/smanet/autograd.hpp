#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "smanet/tensor.hpp"

namespace smanet {

// Double-precision value environment used when a recorded graph is re-run by
// the finite-difference checker. Keyed by storage identity.
class ReplayValues {
 public:
  bool contains(const Tensor& t) const { return map_.count(t.id()) != 0; }

  const std::vector<double>& at(const Tensor& t) const;
  std::vector<double>& slot(const Tensor& t) { return map_[t.id()]; }

  // Copies the tensor's float values in as doubles.
  void seed(const Tensor& t);

 private:
  std::unordered_map<const void*, std::vector<double>> map_;
};

// One recorded primitive application.
struct TapeNode {
  const char* op;
  std::vector<Tensor> inputs;
  Tensor output;
  // Propagates output.grad into the inputs' grad buffers (accumulating).
  std::function<void()> backward;
  // Recomputes the output from ReplayValues entries at 64-bit precision,
  // without side effects.
  std::function<void(ReplayValues&)> replay;
};

// Records one forward pass; topological order is execution order. A tape is
// consumed by a single backward() call and then discarded.
class Tape {
 public:
  void record(TapeNode node) { nodes_.push_back(std::move(node)); }

  // Seeds d(root)/d(root)=1 and walks the nodes in reverse, accumulating
  // gradients. root must be scalar and produced by this tape.
  void backward(const Tensor& root);

  // Re-evaluates the whole graph in double. Any node input not produced by an
  // earlier node is seeded from its float values unless already present.
  void replay(ReplayValues& vals) const;

  std::size_t size() const { return nodes_.size(); }
  const std::vector<TapeNode>& nodes() const { return nodes_; }

 private:
  std::vector<TapeNode> nodes_;
  bool consumed_ = false;
};

}  // namespace smanet
