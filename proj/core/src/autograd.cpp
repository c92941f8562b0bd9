#include "smanet/autograd.hpp"

#include <unordered_set>

#include "smanet/common.hpp"

namespace smanet {

const std::vector<double>& ReplayValues::at(const Tensor& t) const {
  auto it = map_.find(t.id());
  require<Error>(it != map_.end(), "replay value missing for a graph input");
  return it->second;
}

void ReplayValues::seed(const Tensor& t) {
  auto& buf = map_[t.id()];
  buf.resize(t.numel());
  const auto vals = t.values();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<double>(vals[i]);
}

void Tape::backward(const Tensor& root) {
  require<Error>(!consumed_, "backward called twice on the same tape");
  require<ShapeError>(root.numel() == 1, "backward root must be scalar, got ", root.shape_str());
  require<Error>(root.requires_grad(), "backward root does not require grad");
  bool produced = false;
  for (const TapeNode& n : nodes_) {
    if (n.output.id() == root.id()) {
      produced = true;
      break;
    }
  }
  require<Error>(produced, "backward root was not produced by this tape");
  consumed_ = true;
  root.raw()->grad.assign(1, 1.0f);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.requires_grad()) continue;  // constant subgraph
    it->backward();
  }
}

void Tape::replay(ReplayValues& vals) const {
  std::unordered_set<const void*> produced;
  for (const TapeNode& n : nodes_) produced.insert(n.output.id());
  for (const TapeNode& n : nodes_) {
    for (const Tensor& in : n.inputs) {
      if (!produced.count(in.id()) && !vals.contains(in)) vals.seed(in);
    }
    n.replay(vals);
  }
}

}  // namespace smanet
