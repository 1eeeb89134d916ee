#include "uled/eval.hpp"

#include <cmath>

#include "uled/errors.hpp"

namespace uled {

bool exact_match(const Parameters& params, const std::vector<int>& prompt,
                 const std::vector<int>& answer) {
  if (prompt.empty() || answer.empty()) throw LengthError("exact_match: empty sequence");
  std::vector<int> tokens = prompt;
  tokens.insert(tokens.end(), answer.begin(), answer.end());
  const ForwardTrace trace = forward(params, tokens, {});
  for (std::size_t i = 0; i < answer.size(); ++i) {
    const std::size_t pos = prompt.size() + i;  // answer token position
    const auto row = trace.logits.row(pos - 1);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (static_cast<int>(best) != tokens[pos]) return false;
  }
  return true;
}

bool exact_match_greedy(const Parameters& params, const std::vector<int>& prompt,
                        const std::vector<int>& answer, int stop_token) {
  const std::vector<int> got = greedy_decode(params, prompt, answer.size(), stop_token);
  return got == answer;
}

double perplexity(const Parameters& params, const std::vector<TrainSequence>& corpus) {
  if (corpus.empty()) throw EmptyBatchError("perplexity: empty corpus");
  double total = 0.0;
  std::size_t n_positions = 0;
  for (const auto& seq : corpus) {
    const ForwardTrace trace = forward(params, seq.tokens, {});
    for (std::size_t t = 0; t + 1 < seq.tokens.size(); ++t) {
      const auto row = trace.logits.row(t);
      double best = row[0];
      for (std::size_t j = 1; j < row.size(); ++j) best = std::max(best, row[j]);
      double denom = 0.0;
      for (std::size_t j = 0; j < row.size(); ++j) denom += std::exp(row[j] - best);
      total += best + std::log(denom) - row[static_cast<std::size_t>(seq.tokens[t + 1])];
      ++n_positions;
    }
  }
  if (n_positions == 0) throw EmptyBatchError("perplexity: no next-token positions");
  return std::exp(total / static_cast<double>(n_positions));
}

EvalReport evaluate(const Parameters& params, const Parameters& pre_edit,
                    const std::vector<EditRecord>& records, const Vocabulary& vocab,
                    const std::vector<TrainSequence>& heldout) {
  if (records.empty()) throw EmptyBatchError("evaluate: no records");
  EvalReport report;
  report.n_records = records.size();

  std::size_t eff = 0, gen = 0, spe = 0, retained_base = 0, retained_hits = 0;
  std::size_t eff_g = 0, gen_g = 0, spe_g = 0;
  for (const auto& r : records) {
    const EditInstance edit = encode_qa(vocab, r.edit_prompt, r.answer);
    const EditInstance reph = encode_qa(vocab, r.rephrase_prompt, r.answer);
    const EditInstance unrel = encode_qa(vocab, r.unrelated_prompt, r.unrelated_answer);

    eff += exact_match(params, edit.prompt_tokens, edit.answer_tokens);
    gen += exact_match(params, reph.prompt_tokens, reph.answer_tokens);
    const bool unrel_hit = exact_match(params, unrel.prompt_tokens, unrel.answer_tokens);
    spe += unrel_hit;
    if (exact_match(pre_edit, unrel.prompt_tokens, unrel.answer_tokens)) {
      ++retained_base;
      retained_hits += unrel_hit;
    }

    eff_g += exact_match_greedy(params, edit.prompt_tokens, edit.answer_tokens,
                                Vocabulary::end_id);
    gen_g += exact_match_greedy(params, reph.prompt_tokens, reph.answer_tokens,
                                Vocabulary::end_id);
    spe_g += exact_match_greedy(params, unrel.prompt_tokens, unrel.answer_tokens,
                                Vocabulary::end_id);
  }

  const double n = static_cast<double>(records.size());
  report.efficacy = static_cast<double>(eff) / n;
  report.generalization = static_cast<double>(gen) / n;
  report.specificity = static_cast<double>(spe) / n;
  report.specificity_retained =
      retained_base == 0 ? 1.0
                         : static_cast<double>(retained_hits) / static_cast<double>(retained_base);
  report.efficacy_greedy = static_cast<double>(eff_g) / n;
  report.generalization_greedy = static_cast<double>(gen_g) / n;
  report.specificity_greedy = static_cast<double>(spe_g) / n;

  if (!heldout.empty()) {
    report.perplexity_before = perplexity(pre_edit, heldout);
    report.perplexity_after = perplexity(params, heldout);
  }
  return report;
}

}  // namespace uled
