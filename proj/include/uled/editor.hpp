#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "uled/features.hpp"
#include "uled/model.hpp"
#include "uled/stats.hpp"

namespace uled {

// Ablation switches mirroring the studied variants: dropping normalization
// entirely, normalizing only a module subset, freezing the running statistics
// after the first turn, and the inner-product scaling variant.
struct AblationConfig {
  enum class ScalingMode { norm_squared, inner_product };

  bool normalization = true;
  double norm_coverage = 1.0;
  std::uint64_t coverage_seed = 0;
  bool freeze_stats_after_first_turn = false;
  ScalingMode scaling_mode = ScalingMode::norm_squared;
  bool feature_averaging = false;  // one averaged feature row per instance

  bool operator==(const AblationConfig&) const = default;
};

struct EditorConfig {
  double eta = 1e-6;
  std::vector<ModuleRef> modules;
  double eps = 1e-5;
  AblationConfig ablation;

  void validate() const;  // throws ConfigError
  bool operator==(const EditorConfig&) const = default;
};

// Everything the engine carries between turns. Size is fixed by the config:
// one RunningMoments per module plus the coverage assignment, nothing that
// grows with the number of edits.
struct EngineState {
  std::vector<std::pair<ModuleRef, RunningMoments>> moments;  // config.modules order
  std::vector<ModuleRef> normalized_modules;  // coverage subset, fixed at stream start
  std::uint64_t turn_index = 0;

  RunningMoments& moments_for(const ModuleRef& m);
  const RunningMoments& moments_for(const ModuleRef& m) const;
  bool normalizes(const ModuleRef& m) const;
  std::size_t byte_size() const;
  bool operator==(const EngineState&) const = default;
};

EngineState init_engine_state(const Parameters& params, const EditorConfig& cfg);

struct ModuleTurnStats {
  ModuleRef module;
  std::size_t n_rows = 0;
  double residual = 0.0;            // ||H^T (H d - V) + d||_F
  double residual_tolerance = 0.0;  // 1e-8 * (||H||_F ||V||_F + 1)
  bool flagged = false;             // residual above tolerance
  double delta_norm = 0.0;
  double condition_estimate = 0.0;  // of (H^T H + I)
};

struct TurnReport {
  std::uint64_t turn_index = 0;
  std::vector<ModuleTurnStats> modules;
  double wall_seconds = 0.0;
  std::size_t state_bytes = 0;
};

// Eq-style scaled update direction for one feature row.
// norm_squared: -eta * ||h_norm||^2 * v_norm
// inner_product: -eta * (h_raw . h_norm) * v_norm
std::vector<double> scale_update(const std::vector<double>& h_norm,
                                 const std::vector<double>& v_norm,
                                 const std::vector<double>& h_raw, const EditorConfig& cfg);

struct TurnResult {
  Parameters params;
  EngineState state;
  TurnReport report;
};

// One editing turn: extract features against the current parameters, fold
// the turn's moments into the running statistics (unless frozen), normalize,
// scale, solve the ridge system per module, and apply every delta. Returns
// new values; on any error the inputs are untouched (no partial application).
TurnResult edit_turn(const Parameters& params, const EngineState& state,
                     const std::vector<EditInstance>& batch, const EditorConfig& cfg);

struct StreamResult {
  Parameters params;
  EngineState state;
  std::vector<TurnReport> reports;
};

using TurnCallback = std::function<void(const TurnReport&)>;

// Folds edit_turn over the batches in order; only EngineState carries
// information between turns. on_turn (if set) sees each report as it is
// produced, including all turns completed before a failure.
StreamResult run_stream(const Parameters& params, const EngineState& state,
                        const std::vector<std::vector<EditInstance>>& stream,
                        const EditorConfig& cfg, const TurnCallback& on_turn = {});

// Fresh-state convenience overload.
StreamResult run_stream(const Parameters& params,
                        const std::vector<std::vector<EditInstance>>& stream,
                        const EditorConfig& cfg, const TurnCallback& on_turn = {});

}  // namespace uled
