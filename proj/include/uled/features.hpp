#pragma once

#include <vector>

#include "uled/model.hpp"

namespace uled {

// One editing instance: a tokenized prompt (question plus answer separator)
// and the supervised answer tokens (answer words plus the end marker).
struct EditInstance {
  std::vector<int> prompt_tokens;
  std::vector<int> answer_tokens;

  std::vector<int> full() const;  // prompt followed by answer

  // True exactly on answer positions. mask_end_marker=false leaves the
  // final answer token (the end marker) unsupervised.
  std::vector<bool> label_mask(bool mask_end_marker = true) const;

  void validate(std::size_t max_seq_len) const;
  bool operator==(const EditInstance&) const = default;
};

// The joint editing feature for one (module, label token) pair. The row is
// taken at the position that predicts the label token (one before it), where
// that token's loss term actually flows: z = h (unnormalized module input)
// followed by grad_y (gradient of the supervised loss w.r.t. the module
// output there).
struct EditFeature {
  ModuleRef module;
  std::vector<double> h;
  std::vector<double> grad_y;
  std::vector<double> z;
};

// One forward + one backward on the instance; emits one EditFeature per
// (module, masked label token), modules in the given order, label positions
// ascending. Parameters are not mutated.
std::vector<EditFeature> extract(const Parameters& params, const EditInstance& instance,
                                 const std::vector<ModuleRef>& modules);

}  // namespace uled
