#include "uled/features.hpp"

#include "uled/errors.hpp"

namespace uled {

std::vector<int> EditInstance::full() const {
  std::vector<int> out = prompt_tokens;
  out.insert(out.end(), answer_tokens.begin(), answer_tokens.end());
  return out;
}

std::vector<bool> EditInstance::label_mask(bool mask_end_marker) const {
  std::vector<bool> mask(prompt_tokens.size() + answer_tokens.size(), false);
  std::size_t covered = answer_tokens.size();
  if (!mask_end_marker && covered > 0) --covered;
  for (std::size_t i = 0; i < covered; ++i) mask[prompt_tokens.size() + i] = true;
  return mask;
}

void EditInstance::validate(std::size_t max_seq_len) const {
  if (prompt_tokens.empty()) throw LengthError("edit instance: empty prompt");
  if (answer_tokens.empty()) throw LengthError("edit instance: empty answer");
  const std::size_t total = prompt_tokens.size() + answer_tokens.size();
  if (total > max_seq_len) {
    throw LengthError("edit instance: length " + std::to_string(total) + " exceeds " +
                      std::to_string(max_seq_len));
  }
}

std::vector<EditFeature> extract(const Parameters& params, const EditInstance& instance,
                                 const std::vector<ModuleRef>& modules) {
  if (modules.empty()) throw ConfigError("extract: no modules given");
  instance.validate(params.config.max_seq_len);

  const std::vector<int> tokens = instance.full();
  // Supervise only the answer words. At the end-marker position the raw
  // gradient is near zero (sequence termination is universal), but mean
  // subtraction would turn it into a full-strength anti-mean update row —
  // pure collateral with no install value.
  const std::vector<bool> mask = instance.label_mask(false);
  const BackwardResult res = loss_and_backward(params, tokens, mask, modules);

  std::vector<EditFeature> out;
  for (const auto& m : modules) {
    const Matrix& inputs = res.tap_inputs.at(m);
    const Matrix& grads = res.tap_grads.at(m);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (!mask[t]) continue;
      // The loss term for the label at t is produced one position earlier,
      // so that is where its hidden state and gradient live.
      const std::size_t p = t - 1;
      EditFeature f;
      f.module = m;
      f.h.assign(inputs.row(p).begin(), inputs.row(p).end());
      f.grad_y.assign(grads.row(p).begin(), grads.row(p).end());
      f.z = f.h;
      f.z.insert(f.z.end(), f.grad_y.begin(), f.grad_y.end());
      out.push_back(std::move(f));
    }
  }
  return out;
}

}  // namespace uled
