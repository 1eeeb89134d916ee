// uled: desk-scale lifelong model-editing pipeline.
//   gen-data -> pretrain -> edit -> eval, plus inspect-stats.
// Every failure exits nonzero with one machine-parsable JSON error line.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "uled/checkpoint.hpp"
#include "uled/data.hpp"
#include "uled/editor.hpp"
#include "uled/errors.hpp"
#include "uled/eval.hpp"
#include "uled/model.hpp"
#include "uled/report.hpp"

namespace {

using uled::Checkpoint;

std::vector<uled::ModuleRef> parse_modules(const std::string& csv) {
  std::vector<uled::ModuleRef> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const std::string part =
        csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!part.empty()) out.push_back(uled::parse_module_ref(part));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw uled::ConfigError("--modules: empty module list");
  return out;
}

// --ablate is a comma list: no-norm, freeze-stats, coverage=<f>,
// coverage-seed=<n>, scaling=inner, averaging.
void apply_ablations(uled::AblationConfig& ab, const std::string& csv) {
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto comma = csv.find(',', start);
    const std::string part =
        csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!part.empty()) {
      if (part == "no-norm") {
        ab.normalization = false;
      } else if (part == "freeze-stats") {
        ab.freeze_stats_after_first_turn = true;
      } else if (part == "averaging") {
        ab.feature_averaging = true;
      } else if (part.rfind("coverage=", 0) == 0) {
        ab.norm_coverage = std::stod(part.substr(9));
      } else if (part.rfind("coverage-seed=", 0) == 0) {
        ab.coverage_seed = std::stoull(part.substr(14));
      } else if (part == "scaling=inner") {
        ab.scaling_mode = uled::AblationConfig::ScalingMode::inner_product;
      } else if (part == "scaling=norm") {
        ab.scaling_mode = uled::AblationConfig::ScalingMode::norm_squared;
      } else {
        throw uled::ConfigError("--ablate: unknown entry '" + part + "'");
      }
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
}

std::ofstream open_report(const std::string& path, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw uled::IoError("cannot open report file: " + path);
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"desk-scale lifelong model editing"};
  app.set_config("--config", "", "flat key=value config file; flags override");
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic fact dataset");
  std::uint64_t gen_seed = 1;
  std::size_t n_base = 1500, n_edits = 1000, templates = 3;
  std::string gen_out = "data";
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--n-base", n_base, "base fact count");
  gen->add_option("--n-edits", n_edits, "edit fact count");
  gen->add_option("--templates", templates, "question templates per relation");
  gen->add_option("--out", gen_out, "output directory");

  // ---- pretrain ----
  auto* pre = app.add_subcommand("pretrain", "train the base model on the generated facts");
  std::string pre_data = "data", pre_out = "base.uled";
  std::uint64_t pre_seed = 1;
  std::size_t pre_steps = 40000;
  double pre_step_size = 0.05;
  uled::ModelConfig model_cfg;
  pre->add_option("--data", pre_data, "dataset directory from gen-data");
  pre->add_option("--out", pre_out, "checkpoint path");
  pre->add_option("--seed", pre_seed, "init + shuffle seed");
  pre->add_option("--steps", pre_steps, "SGD steps");
  pre->add_option("--step-size", pre_step_size, "SGD step size");
  pre->add_option("--embed-dim", model_cfg.embed_dim, "embedding width");
  pre->add_option("--n-blocks", model_cfg.n_blocks, "transformer blocks");
  pre->add_option("--mlp-hidden", model_cfg.mlp_hidden, "MLP hidden width");
  pre->add_option("--max-seq", model_cfg.max_seq_len, "max sequence length");

  // ---- edit ----
  auto* edit = app.add_subcommand("edit", "stream the edit records through the engine");
  std::string edit_ck = "base.uled", edit_data = "data", edit_out = "edited.uled";
  std::string edit_report = "turns.jsonl";
  std::string edit_modules = "0.mlp_in,0.mlp_out,1.mlp_in,1.mlp_out";
  std::string edit_ablate;
  std::size_t turn_size = 100, max_turns = 0;
  double eta = 1e-6, eps = 1e-5;
  bool resume = false;
  edit->add_option("--ck", edit_ck, "input checkpoint");
  edit->add_option("--data", edit_data, "dataset directory");
  edit->add_option("--out", edit_out, "output checkpoint");
  edit->add_option("--report", edit_report, "turn report file (JSON lines)");
  auto* opt_modules = edit->add_option("--modules", edit_modules, "editable modules, comma list");
  auto* opt_ablate = edit->add_option("--ablate", edit_ablate,
                                      "comma list: no-norm, freeze-stats, coverage=0.5, "
                                      "coverage-seed=7, scaling=inner, averaging");
  auto* opt_turn = edit->add_option("--turn-size", turn_size, "instances per editing turn");
  auto* opt_eta = edit->add_option("--eta", eta, "global update scale");
  auto* opt_eps = edit->add_option("--eps", eps, "normalization epsilon");
  edit->add_option("--max-turns", max_turns, "stop after this many turns (0 = all)");
  edit->add_flag("--resume", resume, "continue a partially edited checkpoint");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "evaluate an edited checkpoint");
  std::string ev_ck = "edited.uled", ev_pre = "base.uled", ev_data = "data";
  std::string ev_report = "eval.jsonl";
  ev->add_option("--ck", ev_ck, "edited checkpoint");
  ev->add_option("--pre", ev_pre, "pre-edit checkpoint");
  ev->add_option("--data", ev_data, "dataset directory");
  ev->add_option("--report", ev_report, "report file (JSON line appended)");

  // ---- inspect-stats ----
  auto* ins = app.add_subcommand("inspect-stats", "print per-module running statistics");
  std::string ins_ck = "edited.uled";
  ins->add_option("--ck", ins_ck, "checkpoint to inspect");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    throw uled::ConfigError(std::string("flag parsing: ") + e.what());
  }

  if (gen->parsed()) {
    const uled::SyntheticData data = uled::gen_synthetic(n_base, n_edits, templates, gen_seed);
    std::filesystem::create_directories(gen_out);
    uled::save_records(data.edits, gen_out + "/edits.jsonl");
    uled::save_qa(data.train_qa, gen_out + "/train_qa.jsonl");
    uled::save_qa(data.probe_qa, gen_out + "/probe_qa.jsonl");
    uled::save_qa(data.heldout_qa, gen_out + "/heldout_qa.jsonl");
    std::cout << "wrote " << data.edits.size() << " edit records, " << data.train_qa.size()
              << " training pairs, " << data.probe_qa.size() << " probes, "
              << data.heldout_qa.size() << " held-out pairs to " << gen_out << "\n";
    return 0;
  }

  if (pre->parsed()) {
    const auto train = uled::load_qa(pre_data + "/train_qa.jsonl");
    const auto probes = uled::load_qa(pre_data + "/probe_qa.jsonl");
    const auto heldout = uled::load_qa(pre_data + "/heldout_qa.jsonl");
    const auto records = uled::load_records(pre_data + "/edits.jsonl");

    std::vector<std::string> texts;
    for (const auto& qa : train) {
      texts.push_back(qa.prompt);
      texts.push_back(qa.answer);
    }
    for (const auto& qa : heldout) {
      texts.push_back(qa.prompt);
      texts.push_back(qa.answer);
    }
    for (const auto& r : records) {
      texts.push_back(r.edit_prompt);
      texts.push_back(r.answer);
      texts.push_back(r.rephrase_prompt);
      texts.push_back(r.unrelated_prompt);
      texts.push_back(r.unrelated_answer);
    }
    const uled::Vocabulary vocab = uled::build_vocab(texts);

    model_cfg.vocab_size = vocab.size();
    model_cfg.seed = pre_seed;
    uled::Parameters params = uled::init_model(model_cfg);
    params = uled::pretrain(params, uled::lm_sequences(vocab, train), pre_steps,
                            pre_step_size, pre_seed);

    std::size_t hits = 0;
    for (const auto& qa : probes) {
      const uled::EditInstance inst = uled::encode_qa(vocab, qa.prompt, qa.answer);
      hits += uled::exact_match(params, inst.prompt_tokens, inst.answer_tokens);
    }
    std::cout << "base-probe exact match: " << hits << "/" << probes.size() << "\n";

    Checkpoint ck;
    ck.params = std::move(params);
    ck.vocab = vocab;
    ck.seeds["pretrain"] = pre_seed;
    ck.save(pre_out);
    std::cout << "wrote " << pre_out << "\n";
    return 0;
  }

  if (edit->parsed()) {
    Checkpoint ck = Checkpoint::load(edit_ck);
    const auto records = uled::load_records(edit_data + "/edits.jsonl");

    uled::EditorConfig cfg;
    uled::EngineState state;
    std::uint64_t done_turns = 0;
    if (resume) {
      if (!ck.editor_config || !ck.engine_state) {
        throw uled::ConfigError("--resume: checkpoint has no editing state");
      }
      for (const CLI::Option* opt : {opt_modules, opt_ablate, opt_eta, opt_eps, opt_turn}) {
        if (opt->count() > 0) {
          throw uled::ConfigError("--resume uses the stored editor config; drop " +
                                  opt->get_name());
        }
      }
      cfg = *ck.editor_config;
      state = *ck.engine_state;
      done_turns = state.turn_index;
      if (!ck.seeds.count("turn_size")) {
        throw uled::ConfigError("--resume: checkpoint lacks the stored turn size");
      }
      turn_size = ck.seeds.at("turn_size");
    } else {
      cfg.eta = eta;
      cfg.eps = eps;
      cfg.modules = parse_modules(edit_modules);
      apply_ablations(cfg.ablation, edit_ablate);
      state = uled::init_engine_state(ck.params, cfg);
    }

    std::vector<std::vector<uled::EditInstance>> stream;
    std::vector<uled::EditInstance> batch;
    for (const auto& r : records) {
      batch.push_back(uled::encode(ck.vocab, r));
      if (batch.size() == turn_size) {
        stream.push_back(std::move(batch));
        batch.clear();
      }
    }
    if (!batch.empty()) stream.push_back(std::move(batch));
    if (done_turns > stream.size()) {
      throw uled::ConfigError("--resume: checkpoint is past the end of this stream");
    }
    std::vector<std::vector<uled::EditInstance>> todo(
        stream.begin() + static_cast<std::ptrdiff_t>(done_turns), stream.end());
    if (max_turns > 0 && todo.size() > max_turns) todo.resize(max_turns);

    std::ofstream report = open_report(edit_report, resume);
    if (todo.empty()) {
      std::cout << "nothing to do: " << done_turns << " turns already applied\n";
    } else {
      const uled::StreamResult result =
          uled::run_stream(ck.params, state, todo, cfg,
                           [&report](const uled::TurnReport& tr) {
                             report << uled::to_json(tr).dump() << "\n";
                             report.flush();
                           });
      ck.params = result.params;
      state = result.state;
    }
    ck.editor_config = cfg;
    ck.engine_state = state;
    ck.seeds["turn_size"] = turn_size;
    ck.save(edit_out);
    std::cout << "applied " << todo.size() << " turns (total " << state.turn_index
              << "), wrote " << edit_out << "\n";
    return 0;
  }

  if (ev->parsed()) {
    const Checkpoint ck = Checkpoint::load(ev_ck);
    const Checkpoint pre_ck = Checkpoint::load(ev_pre);
    const auto records = uled::load_records(ev_data + "/edits.jsonl");
    const auto heldout = uled::load_qa(ev_data + "/heldout_qa.jsonl");
    const uled::EvalReport report = uled::evaluate(
        ck.params, pre_ck.params, records, ck.vocab, uled::qa_sequences(ck.vocab, heldout));
    std::ofstream out = open_report(ev_report, true);
    out << uled::to_json(report).dump() << "\n";
    std::cout << uled::to_json(report).dump(2) << "\n";
    return 0;
  }

  if (ins->parsed()) {
    const Checkpoint ck = Checkpoint::load(ins_ck);
    if (!ck.engine_state) {
      std::cout << "no engine state in " << ins_ck << "\n";
      return 0;
    }
    const uled::EngineState& state = *ck.engine_state;
    std::cout << "turn_index: " << state.turn_index << "\n";
    std::cout << "state_bytes: " << state.byte_size() << "\n";
    for (const auto& [ref, rm] : state.moments) {
      double mu_norm = 0.0;
      for (double v : rm.mu) mu_norm += v * v;
      double mean_sigma = 0.0;
      if (rm.count > 0) {
        const auto sd = uled::sigma(rm);
        for (double v : sd) mean_sigma += v;
        mean_sigma /= static_cast<double>(sd.size());
      }
      std::cout << to_string(ref) << ": count=" << rm.count << " |mu|=" << std::sqrt(mu_norm)
                << " mean_sigma=" << mean_sigma
                << (state.normalizes(ref) ? " [normalized]" : " [raw]") << "\n";
    }
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const uled::Error& e) {
    nlohmann::ordered_json err;
    err["error"] = e.code;
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    nlohmann::ordered_json err;
    err["error"] = "internal";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
