#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uled/linalg.hpp"

namespace uled {

struct ModelConfig {
  std::size_t vocab_size = 4096;
  std::size_t embed_dim = 64;
  std::size_t n_blocks = 2;
  std::size_t mlp_hidden = 256;
  std::size_t max_seq_len = 64;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
  bool operator==(const ModelConfig&) const = default;
};

// Names one editable linear module: the MLP input or output projection of
// one block. String form "<block>.mlp_in" / "<block>.mlp_out".
struct ModuleRef {
  enum class Slot { mlp_in, mlp_out };
  std::size_t block = 0;
  Slot slot = Slot::mlp_in;

  auto operator<=>(const ModuleRef&) const = default;
};

std::string to_string(const ModuleRef& m);
ModuleRef parse_module_ref(const std::string& text);  // throws ParseError

struct BlockParams {
  Matrix wq, wk, wv, wo;        // [E x E], no biases
  Matrix w_mlp_in;              // [E x M]
  Matrix b_mlp_in;              // [1 x M]
  Matrix w_mlp_out;             // [M x E]
  Matrix b_mlp_out;             // [1 x E]

  bool operator==(const BlockParams&) const = default;
};

// All trainable tensors. Layout convention: y = x W + b with W of shape
// [d_in x d_out], so an editing delta of shape [d x d'] adds directly.
struct Parameters {
  ModelConfig config;
  Matrix tok_emb;               // [V x E]
  Matrix pos_emb;               // [S x E]
  std::vector<BlockParams> blocks;
  Matrix ln_f_scale, ln_f_shift;  // [1 x E]
  Matrix w_head;                // [E x V]

  // Visits every tensor in a fixed documented order (the checkpoint and
  // gradient-update order): tok_emb, pos_emb, block<i>.{wq,wk,wv,wo,
  // w_mlp_in,b_mlp_in,w_mlp_out,b_mlp_out}, ln_f_scale, ln_f_shift, w_head.
  void for_each_tensor(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each_tensor(const std::function<void(const std::string&, const Matrix&)>& fn) const;

  // Input/output dims (d, d') of an editable module's weight.
  std::pair<std::size_t, std::size_t> module_dims(const ModuleRef& m) const;
  Matrix& module_weight(const ModuleRef& m);
  const Matrix& module_weight(const ModuleRef& m) const;

  std::size_t parameter_count() const;
  bool operator==(const Parameters&) const = default;
};

// Closed-form count for a config: V*E + S*E + B*(4E^2 + 2EM + M + E) + 2E + E*V.
std::size_t parameter_count(const ModelConfig& cfg);

Parameters init_model(const ModelConfig& cfg);

struct ForwardTrace {
  Matrix logits;                          // [T x V]
  std::map<ModuleRef, Matrix> tap_inputs;  // per tap: [T x d]
};

// Additive probe on one module-output coordinate during the forward pass;
// used by finite-difference checks of the tap gradients.
struct TapInjection {
  ModuleRef module;
  std::size_t position = 0;
  std::size_t coord = 0;
  double amount = 0.0;
};

ForwardTrace forward(const Parameters& params, const std::vector<int>& tokens,
                     const std::vector<ModuleRef>& taps);

struct BackwardResult {
  double loss = 0.0;
  Parameters grads;                        // same shapes as the parameters
  std::map<ModuleRef, Matrix> tap_inputs;  // [T x d] module inputs
  std::map<ModuleRef, Matrix> tap_grads;   // [T x d'] dloss/d(module output)
};

// Teacher-forced loss over masked positions: a masked position t contributes
// cross-entropy of tokens[t] under the logits at position t-1. Sum over
// masked positions by default; mean_loss divides by the label count.
BackwardResult loss_and_backward(const Parameters& params,
                                 const std::vector<int>& tokens,
                                 const std::vector<bool>& label_mask,
                                 const std::vector<ModuleRef>& taps,
                                 bool mean_loss = false);

double loss_only(const Parameters& params, const std::vector<int>& tokens,
                 const std::vector<bool>& label_mask,
                 const std::optional<TapInjection>& injection = std::nullopt,
                 bool mean_loss = false);

// Returns parameters with module m's weight incremented by delta; every
// other tensor (and every skipped entry) is bit-identical to the input.
Parameters apply_delta(const Parameters& params, const ModuleRef& m, const Matrix& delta);

struct TrainSequence {
  std::vector<int> tokens;
  std::vector<bool> label_mask;
};

// Plain SGD with a fixed step size over a seeded shuffle of the corpus,
// one sequence per step. Throws TrainingError (with the step index) if the
// loss goes non-finite.
Parameters pretrain(const Parameters& params, const std::vector<TrainSequence>& corpus,
                    std::size_t steps, double step_size, std::uint64_t seed);

// Appends argmax tokens (ties broken toward the lowest id) until max_new
// tokens are emitted or stop_token is produced; the stop token is included.
std::vector<int> greedy_decode(const Parameters& params, const std::vector<int>& prompt,
                               std::size_t max_new, int stop_token = -1);

}  // namespace uled
