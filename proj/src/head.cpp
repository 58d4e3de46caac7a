#include "d3/head.hpp"

namespace d3::head {

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::fc_only: return "fc_only";
    case HeadKind::mlp: return "mlp";
    case HeadKind::self_attention: return "self_attention";
    case HeadKind::transformer2: return "transformer2";
  }
  return "fc_only";
}

std::string to_string(BranchMode mode) {
  switch (mode) {
    case BranchMode::dual: return "dual";
    case BranchMode::original_only: return "original_only";
    case BranchMode::original_original: return "original_original";
    case BranchMode::shuffled_shuffled: return "shuffled_shuffled";
  }
  return "dual";
}

HeadKind head_kind_from_string(const std::string& s) {
  for (auto k : {HeadKind::fc_only, HeadKind::mlp, HeadKind::self_attention, HeadKind::transformer2})
    if (to_string(k) == s) return k;
  throw InvalidInput("unknown head kind: " + s);
}

BranchMode branch_mode_from_string(const std::string& s) {
  for (auto m : {BranchMode::dual, BranchMode::original_only, BranchMode::original_original,
                 BranchMode::shuffled_shuffled})
    if (to_string(m) == s) return m;
  throw InvalidInput("unknown branch mode: " + s);
}

Layout::Layout(HeadKind kind, int dim, int tokens) {
  if (dim < 1) throw InvalidInput("head dimension must be positive");
  if (tokens < 1 || tokens > 2) throw InvalidInput("token stack holds one or two embeddings");
  const int fused = tokens * dim;
  switch (kind) {
    case HeadKind::fc_only:
      break;
    case HeadKind::self_attention:
      for (const char* n : {"W_q", "W_k", "W_v", "W_o"}) add(n, dim, dim);
      break;
    case HeadKind::mlp: {
      const int hidden = 2 * dim;
      add("W_1", fused, hidden);
      add("b_1", hidden, 1);
      add("w_out", hidden, 1);
      add("b_out", 1, 1);
      return;
    }
    case HeadKind::transformer2: {
      if (dim % kTransformerHeads != 0)
        throw InvalidInput("transformer head needs dim divisible by " + std::to_string(kTransformerHeads));
      for (int l = 0; l < kTransformerLayers; ++l) {
        const std::string pre = "l" + std::to_string(l) + ".";
        add(pre + "ln1.g", dim, 1);
        add(pre + "ln1.b", dim, 1);
        for (const char* n : {"W_q", "W_k", "W_v", "W_o"}) add(pre + n, dim, dim);
        for (const char* n : {"b_q", "b_k", "b_v", "b_o"}) add(pre + n, dim, 1);
        add(pre + "ln2.g", dim, 1);
        add(pre + "ln2.b", dim, 1);
        add(pre + "W_ff1", dim, 4 * dim);
        add(pre + "b_ff1", 4 * dim, 1);
        add(pre + "W_ff2", 4 * dim, dim);
        add(pre + "b_ff2", dim, 1);
      }
      add("lnf.g", dim, 1);
      add("lnf.b", dim, 1);
      break;
    }
  }
  add("w_fc", fused, 1);
  add("b_fc", 1, 1);
}

void Layout::add(std::string name, int rows, int cols) {
  blocks_.push_back({std::move(name), rows, cols, size_});
  size_ += static_cast<Eigen::Index>(rows) * cols;
}

const ParamBlock& Layout::find(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  throw std::out_of_range("no parameter block named " + name);
}

}  // namespace d3::head
