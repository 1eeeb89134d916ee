#include "uled/editor.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "uled/errors.hpp"
#include "uled/rng.hpp"

namespace uled {

namespace {

// Per-module feature rows collected for one turn, batch order.
struct ModuleRows {
  std::size_t d = 0;       // hidden-state dim
  std::size_t d_out = 0;   // gradient dim
  std::vector<std::vector<double>> z;  // each row has dim d + d_out
};

std::vector<double> mean_rows(const std::vector<std::vector<double>>& rows) {
  std::vector<double> out(rows[0].size(), 0.0);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += r[j];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (double& x : out) x *= inv;
  return out;
}

}  // namespace

void EditorConfig::validate() const {
  if (eta < 0.0 || !std::isfinite(eta)) throw ConfigError("editor config: eta must be >= 0");
  if (!std::isfinite(eps) || eps <= 0.0) throw ConfigError("editor config: eps must be > 0");
  if (modules.empty()) throw ConfigError("editor config: no modules");
  std::set<ModuleRef> seen;
  for (const auto& m : modules) {
    if (!seen.insert(m).second) {
      throw ConfigError("editor config: duplicate module " + to_string(m));
    }
  }
  if (ablation.norm_coverage < 0.0 || ablation.norm_coverage > 1.0) {
    throw ConfigError("editor config: norm_coverage outside [0,1]");
  }
}

RunningMoments& EngineState::moments_for(const ModuleRef& m) {
  for (auto& [ref, rm] : moments) {
    if (ref == m) return rm;
  }
  throw ConfigError("engine state: no moments for module " + to_string(m));
}

const RunningMoments& EngineState::moments_for(const ModuleRef& m) const {
  return const_cast<EngineState*>(this)->moments_for(m);
}

bool EngineState::normalizes(const ModuleRef& m) const {
  return std::find(normalized_modules.begin(), normalized_modules.end(), m) !=
         normalized_modules.end();
}

std::size_t EngineState::byte_size() const {
  std::size_t bytes = sizeof(turn_index);
  for (const auto& [ref, rm] : moments) {
    bytes += sizeof(ref);
    bytes += sizeof(rm.dim) + sizeof(rm.count) + sizeof(rm.turns_merged) + sizeof(rm.eps);
    bytes += (rm.mu.size() + rm.m2.size()) * sizeof(double);
  }
  bytes += normalized_modules.size() * sizeof(ModuleRef);
  return bytes;
}

EngineState init_engine_state(const Parameters& params, const EditorConfig& cfg) {
  cfg.validate();
  EngineState state;
  for (const auto& m : cfg.modules) {
    const auto [d, d_out] = params.module_dims(m);
    state.moments.emplace_back(m, RunningMoments(d + d_out, cfg.eps));
  }
  // Coverage subset: a seeded shuffle taken as a prefix, so smaller
  // coverages are nested inside larger ones under the same seed.
  std::vector<ModuleRef> order = cfg.modules;
  Rng rng(cfg.ablation.coverage_seed);
  rng.shuffle(order);
  const auto n = static_cast<std::size_t>(
      std::llround(cfg.ablation.norm_coverage * static_cast<double>(order.size())));
  state.normalized_modules.assign(order.begin(), order.begin() + std::min(n, order.size()));
  return state;
}

std::vector<double> scale_update(const std::vector<double>& h_norm,
                                 const std::vector<double>& v_norm,
                                 const std::vector<double>& h_raw, const EditorConfig& cfg) {
  double s = 0.0;
  if (cfg.ablation.scaling_mode == AblationConfig::ScalingMode::norm_squared) {
    for (double x : h_norm) s += x * x;
  } else {
    if (h_raw.size() != h_norm.size()) throw ShapeError("scale_update: h dim mismatch");
    for (std::size_t j = 0; j < h_norm.size(); ++j) s += h_raw[j] * h_norm[j];
  }
  const double factor = -cfg.eta * s;
  std::vector<double> out(v_norm.size());
  for (std::size_t j = 0; j < v_norm.size(); ++j) out[j] = factor * v_norm[j];
  return out;
}

TurnResult edit_turn(const Parameters& params, const EngineState& state,
                     const std::vector<EditInstance>& batch, const EditorConfig& cfg) {
  cfg.validate();
  if (batch.empty()) throw EmptyBatchError("edit_turn: empty batch");
  const auto t_start = std::chrono::steady_clock::now();

  TurnResult result;
  result.state = state;

  // (1) Extract features for every instance against the current parameters.
  std::vector<ModuleRows> per_module(cfg.modules.size());
  for (std::size_t mi = 0; mi < cfg.modules.size(); ++mi) {
    const auto [d, d_out] = params.module_dims(cfg.modules[mi]);
    per_module[mi].d = d;
    per_module[mi].d_out = d_out;
  }
  for (const auto& inst : batch) {
    const std::vector<EditFeature> feats = extract(params, inst, cfg.modules);
    for (std::size_t mi = 0; mi < cfg.modules.size(); ++mi) {
      std::vector<std::vector<double>> rows;
      for (const auto& f : feats) {
        if (f.module == cfg.modules[mi]) rows.push_back(f.z);
      }
      if (cfg.ablation.feature_averaging) {
        per_module[mi].z.push_back(mean_rows(rows));
      } else {
        for (auto& r : rows) per_module[mi].z.push_back(std::move(r));
      }
    }
  }

  // (2) Fold this turn's moments into the running statistics.
  const bool frozen = cfg.ablation.freeze_stats_after_first_turn && state.turn_index >= 1;
  for (std::size_t mi = 0; mi < cfg.modules.size(); ++mi) {
    const BatchMoments bm = batch_moments(per_module[mi].z);
    if (!frozen) {
      merge_turn(result.state.moments_for(cfg.modules[mi]), bm.mean, bm.var,
                 per_module[mi].z.size());
    }
  }

  // (3)-(7) Normalize, split, scale, stack, solve — per module. Deltas are
  // collected and only applied after every module has solved, so a failing
  // solve aborts the whole turn.
  std::vector<Matrix> deltas(cfg.modules.size());
  result.report.turn_index = state.turn_index;
  for (std::size_t mi = 0; mi < cfg.modules.size(); ++mi) {
    const ModuleRef& m = cfg.modules[mi];
    const ModuleRows& rows = per_module[mi];
    const RunningMoments& rm = result.state.moments_for(m);
    const bool norm_on = cfg.ablation.normalization && result.state.normalizes(m);

    const std::size_t n = rows.z.size();
    Matrix h_raw(n, rows.d);
    Matrix v_scaled(n, rows.d_out);
    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<double>& z = rows.z[i];
      const std::vector<double> z_hat = norm_on ? normalize(rm, z) : z;
      std::vector<double> h_norm(z_hat.begin(), z_hat.begin() + rows.d);
      std::vector<double> v_norm(z_hat.begin() + rows.d, z_hat.end());
      std::vector<double> h(z.begin(), z.begin() + rows.d);
      const std::vector<double> v = scale_update(h_norm, v_norm, h, cfg);
      for (std::size_t j = 0; j < rows.d; ++j) h_raw(i, j) = h[j];
      for (std::size_t j = 0; j < rows.d_out; ++j) v_scaled(i, j) = v[j];
    }

    ModuleTurnStats stats;
    stats.module = m;
    stats.n_rows = n;
    deltas[mi] = ridge_update(h_raw, v_scaled, &stats.condition_estimate);

    // Optimality telemetry: residual of the normal equations.
    Matrix r = matmul(h_raw, deltas[mi]);
    for (std::size_t i = 0; i < r.size(); ++i) r.values()[i] -= v_scaled.values()[i];
    Matrix g = matmul(transpose(h_raw), r);
    for (std::size_t i = 0; i < g.size(); ++i) g.values()[i] += deltas[mi].values()[i];
    stats.residual = frobenius_norm(g);
    stats.residual_tolerance =
        1e-8 * (frobenius_norm(h_raw) * frobenius_norm(v_scaled) + 1.0);
    stats.flagged = stats.residual > stats.residual_tolerance;
    stats.delta_norm = frobenius_norm(deltas[mi]);
    result.report.modules.push_back(stats);
  }

  // (8) Apply all deltas.
  result.params = params;
  for (std::size_t mi = 0; mi < cfg.modules.size(); ++mi) {
    result.params = apply_delta(result.params, cfg.modules[mi], deltas[mi]);
  }
  result.state.turn_index = state.turn_index + 1;

  result.report.state_bytes = result.state.byte_size();
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

StreamResult run_stream(const Parameters& params, const EngineState& state,
                        const std::vector<std::vector<EditInstance>>& stream,
                        const EditorConfig& cfg, const TurnCallback& on_turn) {
  if (stream.empty()) throw EmptyBatchError("run_stream: empty stream");
  StreamResult out;
  out.params = params;
  out.state = state;
  for (const auto& batch : stream) {
    TurnResult turn = edit_turn(out.params, out.state, batch, cfg);
    out.params = std::move(turn.params);
    out.state = std::move(turn.state);
    if (on_turn) on_turn(turn.report);
    out.reports.push_back(std::move(turn.report));
  }
  return out;
}

StreamResult run_stream(const Parameters& params,
                        const std::vector<std::vector<EditInstance>>& stream,
                        const EditorConfig& cfg, const TurnCallback& on_turn) {
  return run_stream(params, init_engine_state(params, cfg), stream, cfg, on_turn);
}

}  // namespace uled
