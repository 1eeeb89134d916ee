#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uled/features.hpp"

namespace uled {

struct FactTriple {
  std::string subject;
  std::string relation;
  std::string object;
  bool operator==(const FactTriple&) const = default;
};

// One benchmark record: the edit query, its ground-truth answer, a
// paraphrase with the same answer, and an unrelated QA pair drawn from the
// pretraining facts. Field set is fixed; files use exactly these names.
struct EditRecord {
  std::string edit_prompt;
  std::string answer;
  std::string rephrase_prompt;
  std::string unrelated_prompt;
  std::string unrelated_answer;
  bool operator==(const EditRecord&) const = default;
};

struct QaPair {
  std::string prompt;
  std::string answer;
  bool operator==(const QaPair&) const = default;
};

// Word-level vocabulary. Special ids are fixed: 0 padding, 1 unknown,
// 2 answer separator, 3 end of answer; content words follow, sorted.
class Vocabulary {
 public:
  static constexpr int pad_id = 0;
  static constexpr int unk_id = 1;
  static constexpr int sep_id = 2;
  static constexpr int end_id = 3;
  static constexpr std::size_t n_special = 4;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> sorted_words);

  std::size_t size() const { return words_.size() + n_special; }
  const std::vector<std::string>& content_words() const { return words_; }

  // strict: unknown word throws EncodingError; otherwise maps to unk_id.
  int id_of(const std::string& word, bool strict = true) const;
  const std::string& word_of(int id) const;  // throws VocabularyError

  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

// Lowercased whitespace tokenization; the normalization both generation and
// encoding share.
std::vector<std::string> tokenize(const std::string& text);

Vocabulary build_vocab(const std::vector<std::string>& corpus);

// prompt tokens = question words + separator; answer tokens = answer words
// + end marker.
EditInstance encode_qa(const Vocabulary& vocab, const std::string& prompt,
                       const std::string& answer, bool strict = true);
EditInstance encode(const Vocabulary& vocab, const EditRecord& record, bool strict = true);

std::string decode(const Vocabulary& vocab, const std::vector<int>& tokens);

struct SyntheticData {
  std::vector<FactTriple> base_facts;     // trained facts (held-out excluded)
  std::vector<FactTriple> heldout_facts;  // excluded from pretraining
  std::vector<FactTriple> edit_facts;     // aligned with `edits`
  std::vector<QaPair> train_qa;           // pretraining corpus (all templates)
  std::vector<QaPair> probe_qa;           // one probe per trained base fact
  std::vector<QaPair> heldout_qa;         // perplexity corpus
  std::vector<EditRecord> edits;
};

// Deterministic templated fact synthesis. Base and edit facts share the
// subject pool but never a (subject, relation) pair; object words come from
// a pool disjoint from subject and template words, so answers can never
// appear inside prompts.
SyntheticData gen_synthetic(std::size_t n_base_facts, std::size_t n_edit_facts,
                            std::size_t templates_per_relation, std::uint64_t seed);

// Record-intrinsic invariants: answer words absent from all three prompts,
// rephrase differs from the edit prompt, no field empty.
void validate_records(const std::vector<EditRecord>& records);

std::vector<EditRecord> load_records(const std::string& path, bool strict = true);
void save_records(const std::vector<EditRecord>& records, const std::string& path);

std::vector<QaPair> load_qa(const std::string& path);
void save_qa(const std::vector<QaPair>& pairs, const std::string& path);

// Token sequences with answer-position label masks (used for held-out
// perplexity, where only the answer is scored).
std::vector<TrainSequence> qa_sequences(const Vocabulary& vocab,
                                        const std::vector<QaPair>& pairs);

// Token sequences supervised at every position after the first — the
// standard LM objective used for pretraining. Question tokens keep their
// natural entropy, so the net stays calibrated away from trained pairs
// instead of assigning full confidence everywhere.
std::vector<TrainSequence> lm_sequences(const Vocabulary& vocab,
                                        const std::vector<QaPair>& pairs);

}  // namespace uled
