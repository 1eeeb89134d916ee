#pragma once

#include <cstdint>
#include <vector>

#include "uled/data.hpp"
#include "uled/model.hpp"

namespace uled {

struct EvalReport {
  double efficacy = 0.0;        // teacher-forced exact match on edit prompts
  double generalization = 0.0;  // same, on rephrase prompts
  double specificity = 0.0;     // raw accuracy on unrelated pairs
  double specificity_retained = 0.0;  // accuracy restricted to pre-edit hits
  double efficacy_greedy = 0.0;       // greedy-decode secondary columns
  double generalization_greedy = 0.0;
  double specificity_greedy = 0.0;
  double perplexity_before = 0.0;
  double perplexity_after = 0.0;
  std::size_t n_records = 0;
};

// Teacher-forced exact match: with the true answer forced as context, every
// answer-token position's argmax (end marker included) equals the true token.
bool exact_match(const Parameters& params, const std::vector<int>& prompt,
                 const std::vector<int>& answer);

// Greedy-decode variant: the greedy continuation (stopping at the end
// marker) reproduces the answer tokens exactly.
bool exact_match_greedy(const Parameters& params, const std::vector<int>& prompt,
                        const std::vector<int>& answer, int stop_token);

// exp(mean cross-entropy) over every next-token position of the corpus.
double perplexity(const Parameters& params, const std::vector<TrainSequence>& corpus);

// Full post-edit evaluation. pre_edit drives specificity_retained and
// perplexity_before; heldout supplies the perplexity corpus.
EvalReport evaluate(const Parameters& params, const Parameters& pre_edit,
                    const std::vector<EditRecord>& records, const Vocabulary& vocab,
                    const std::vector<TrainSequence>& heldout);

}  // namespace uled
