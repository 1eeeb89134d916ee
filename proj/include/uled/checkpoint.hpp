#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "uled/data.hpp"
#include "uled/editor.hpp"
#include "uled/model.hpp"

namespace uled {

// Self-describing binary container: magic "ULED", a format version, a JSON
// metadata block (model/editor config, vocabulary, engine state scalars,
// seeds), and a named tensor table holding the parameters and the running
// moments. All integers and doubles are little-endian; save-load-save is
// byte-identical.
struct Checkpoint {
  static constexpr std::uint32_t format_version = 1;

  Parameters params;
  Vocabulary vocab;
  std::optional<EditorConfig> editor_config;
  std::optional<EngineState> engine_state;
  std::map<std::string, std::uint64_t> seeds;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace uled
