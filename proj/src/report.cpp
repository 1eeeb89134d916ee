#include "uled/report.hpp"

namespace uled {

nlohmann::ordered_json to_json(const TurnReport& report) {
  nlohmann::ordered_json obj;
  obj["type"] = "turn";
  obj["turn_index"] = report.turn_index;
  nlohmann::ordered_json mods = nlohmann::ordered_json::array();
  for (const auto& m : report.modules) {
    nlohmann::ordered_json jm;
    jm["module"] = to_string(m.module);
    jm["n_rows"] = m.n_rows;
    jm["residual"] = m.residual;
    jm["residual_tolerance"] = m.residual_tolerance;
    jm["flagged"] = m.flagged;
    jm["delta_norm"] = m.delta_norm;
    jm["condition_estimate"] = m.condition_estimate;
    mods.push_back(std::move(jm));
  }
  obj["modules"] = std::move(mods);
  obj["wall_seconds"] = report.wall_seconds;
  obj["state_bytes"] = report.state_bytes;
  return obj;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
  nlohmann::ordered_json obj;
  obj["type"] = "eval";
  obj["efficacy"] = report.efficacy;
  obj["generalization"] = report.generalization;
  obj["specificity"] = report.specificity;
  obj["specificity_retained"] = report.specificity_retained;
  obj["efficacy_greedy"] = report.efficacy_greedy;
  obj["generalization_greedy"] = report.generalization_greedy;
  obj["specificity_greedy"] = report.specificity_greedy;
  obj["perplexity_before"] = report.perplexity_before;
  obj["perplexity_after"] = report.perplexity_after;
  obj["n_records"] = report.n_records;
  return obj;
}

}  // namespace uled
