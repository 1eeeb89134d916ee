#pragma once

#include <json.hpp>

#include "uled/editor.hpp"
#include "uled/eval.hpp"

namespace uled {

// Line-delimited report records with a stable key order.
nlohmann::ordered_json to_json(const TurnReport& report);
nlohmann::ordered_json to_json(const EvalReport& report);

}  // namespace uled
