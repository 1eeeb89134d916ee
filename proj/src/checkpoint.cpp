#include "uled/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "uled/errors.hpp"

namespace uled {

namespace {

constexpr char kMagic[4] = {'U', 'L', 'E', 'D'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw IoError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    }
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

void put_tensor(std::string& out, const std::string& name, const Matrix& m) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u64(out, m.rows());
  put_u64(out, m.cols());
  for (double v : m.values()) put_f64(out, v);
}

Matrix read_tensor(Reader& r, const std::string& expected_name) {
  const std::uint32_t name_len = r.u32();
  const std::string name = r.str(name_len);
  if (name != expected_name) {
    throw IoError("checkpoint tensor order: expected '" + expected_name + "', found '" +
                  name + "'");
  }
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  Matrix m(rows, cols);
  for (double& v : m.values()) v = r.f64();
  return m;
}

const char* scaling_mode_name(AblationConfig::ScalingMode mode) {
  return mode == AblationConfig::ScalingMode::norm_squared ? "norm_squared" : "inner_product";
}

AblationConfig::ScalingMode scaling_mode_from(const std::string& name) {
  if (name == "norm_squared") return AblationConfig::ScalingMode::norm_squared;
  if (name == "inner_product") return AblationConfig::ScalingMode::inner_product;
  throw IoError("checkpoint: unknown scaling mode '" + name + "'");
}

}  // namespace

std::string Checkpoint::serialize() const {
  // Plain nlohmann::json keeps object keys sorted, so the metadata bytes
  // are a pure function of the content.
  nlohmann::json meta;
  meta["model"] = {{"vocab_size", params.config.vocab_size},
                   {"embed_dim", params.config.embed_dim},
                   {"n_blocks", params.config.n_blocks},
                   {"mlp_hidden", params.config.mlp_hidden},
                   {"max_seq_len", params.config.max_seq_len},
                   {"seed", params.config.seed}};
  meta["vocab"] = vocab.content_words();
  meta["seeds"] = seeds;
  if (editor_config) {
    nlohmann::json ed;
    ed["eta"] = editor_config->eta;
    ed["eps"] = editor_config->eps;
    nlohmann::json mods = nlohmann::json::array();
    for (const auto& m : editor_config->modules) mods.push_back(to_string(m));
    ed["modules"] = mods;
    ed["ablation"] = {
        {"normalization", editor_config->ablation.normalization},
        {"norm_coverage", editor_config->ablation.norm_coverage},
        {"coverage_seed", editor_config->ablation.coverage_seed},
        {"freeze_stats_after_first_turn", editor_config->ablation.freeze_stats_after_first_turn},
        {"scaling_mode", scaling_mode_name(editor_config->ablation.scaling_mode)},
        {"feature_averaging", editor_config->ablation.feature_averaging}};
    meta["editor"] = ed;
  }
  if (engine_state) {
    nlohmann::json st;
    st["turn_index"] = engine_state->turn_index;
    nlohmann::json covered = nlohmann::json::array();
    for (const auto& m : engine_state->normalized_modules) covered.push_back(to_string(m));
    st["normalized_modules"] = covered;
    nlohmann::json moments = nlohmann::json::array();
    for (const auto& [ref, rm] : engine_state->moments) {
      moments.push_back({{"module", to_string(ref)},
                         {"dim", rm.dim},
                         {"count", rm.count},
                         {"turns_merged", rm.turns_merged},
                         {"eps", rm.eps}});
    }
    st["moments"] = moments;
    meta["state"] = st;
  }
  const std::string meta_bytes = meta.dump();

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, format_version);
  put_u64(out, meta_bytes.size());
  out += meta_bytes;

  std::uint32_t n_tensors = 0;
  params.for_each_tensor([&n_tensors](const std::string&, const Matrix&) { ++n_tensors; });
  if (engine_state) n_tensors += 2 * static_cast<std::uint32_t>(engine_state->moments.size());
  put_u32(out, n_tensors);

  params.for_each_tensor(
      [&out](const std::string& name, const Matrix& m) { put_tensor(out, name, m); });
  if (engine_state) {
    for (const auto& [ref, rm] : engine_state->moments) {
      Matrix mu(1, rm.dim), m2(1, rm.dim);
      std::copy(rm.mu.begin(), rm.mu.end(), mu.values().begin());
      std::copy(rm.m2.begin(), rm.m2.end(), m2.values().begin());
      put_tensor(out, "stats." + to_string(ref) + ".mu", mu);
      put_tensor(out, "stats." + to_string(ref) + ".m2", m2);
    }
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader r{bytes};
  if (r.str(4) != std::string(kMagic, 4)) throw IoError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != format_version) {
    throw IoError("checkpoint: version " + std::to_string(version) + " unsupported, want " +
                  std::to_string(format_version));
  }
  const std::uint64_t meta_len = r.u64();
  const std::string meta_bytes = r.str(meta_len);
  nlohmann::json meta = nlohmann::json::parse(meta_bytes, nullptr, false);
  if (meta.is_discarded()) throw IoError("checkpoint: corrupt metadata");

  Checkpoint ck;
  const auto& jm = meta.at("model");
  ck.params.config.vocab_size = jm.at("vocab_size").get<std::size_t>();
  ck.params.config.embed_dim = jm.at("embed_dim").get<std::size_t>();
  ck.params.config.n_blocks = jm.at("n_blocks").get<std::size_t>();
  ck.params.config.mlp_hidden = jm.at("mlp_hidden").get<std::size_t>();
  ck.params.config.max_seq_len = jm.at("max_seq_len").get<std::size_t>();
  ck.params.config.seed = jm.at("seed").get<std::uint64_t>();
  ck.vocab = Vocabulary(meta.at("vocab").get<std::vector<std::string>>());
  ck.seeds = meta.at("seeds").get<std::map<std::string, std::uint64_t>>();

  if (meta.contains("editor")) {
    const auto& ed = meta.at("editor");
    EditorConfig cfg;
    cfg.eta = ed.at("eta").get<double>();
    cfg.eps = ed.at("eps").get<double>();
    for (const auto& m : ed.at("modules")) {
      cfg.modules.push_back(parse_module_ref(m.get<std::string>()));
    }
    const auto& ab = ed.at("ablation");
    cfg.ablation.normalization = ab.at("normalization").get<bool>();
    cfg.ablation.norm_coverage = ab.at("norm_coverage").get<double>();
    cfg.ablation.coverage_seed = ab.at("coverage_seed").get<std::uint64_t>();
    cfg.ablation.freeze_stats_after_first_turn =
        ab.at("freeze_stats_after_first_turn").get<bool>();
    cfg.ablation.scaling_mode = scaling_mode_from(ab.at("scaling_mode").get<std::string>());
    cfg.ablation.feature_averaging = ab.at("feature_averaging").get<bool>();
    ck.editor_config = std::move(cfg);
  }
  if (meta.contains("state")) {
    const auto& st = meta.at("state");
    EngineState state;
    state.turn_index = st.at("turn_index").get<std::uint64_t>();
    for (const auto& m : st.at("normalized_modules")) {
      state.normalized_modules.push_back(parse_module_ref(m.get<std::string>()));
    }
    for (const auto& jr : st.at("moments")) {
      RunningMoments rm(jr.at("dim").get<std::size_t>(), jr.at("eps").get<double>());
      rm.count = jr.at("count").get<std::uint64_t>();
      rm.turns_merged = jr.at("turns_merged").get<std::uint64_t>();
      state.moments.emplace_back(parse_module_ref(jr.at("module").get<std::string>()),
                                 std::move(rm));
    }
    ck.engine_state = std::move(state);
  }

  // Tensor table, in the canonical order.
  const std::uint32_t n_tensors = r.u32();
  const ModelConfig& cfg = ck.params.config;
  ck.params.blocks.resize(cfg.n_blocks);
  std::uint32_t read_count = 0;
  ck.params.for_each_tensor([&](const std::string& name, Matrix& m) {
    m = read_tensor(r, name);
    ++read_count;
  });
  // Shape sanity against the config.
  if (ck.params.tok_emb.rows() != cfg.vocab_size || ck.params.tok_emb.cols() != cfg.embed_dim) {
    throw IoError("checkpoint: tok_emb shape disagrees with model config");
  }
  if (ck.engine_state) {
    for (auto& [ref, rm] : ck.engine_state->moments) {
      const Matrix mu = read_tensor(r, "stats." + to_string(ref) + ".mu");
      const Matrix m2 = read_tensor(r, "stats." + to_string(ref) + ".m2");
      if (mu.cols() != rm.dim || m2.cols() != rm.dim) {
        throw IoError("checkpoint: moment tensor shape disagrees with metadata");
      }
      rm.mu.assign(mu.values().begin(), mu.values().end());
      rm.m2.assign(m2.values().begin(), m2.values().end());
      read_count += 2;
    }
  }
  if (read_count != n_tensors) throw IoError("checkpoint: tensor count mismatch");
  if (r.pos != bytes.size()) throw IoError("checkpoint: trailing bytes");
  return ck;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace uled
