#include "uled/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "uled/errors.hpp"
#include "uled/rng.hpp"

namespace uled {

namespace {

const std::array<std::string, 4> kSpecialNames = {"<pad>", "<unk>", "<sep>", "<end>"};

struct RelationSpec {
  const char* name;
  std::array<const char*, 4> templates;  // each contains one {} subject slot
};

// %s marks the subject slot. Template words come from ordinary English;
// generated entity words are syllable compounds that never collide with them.
// Templates are kept short so the subject carries most of each question's
// tokens: questions about different subjects then produce well-separated
// hidden states, which keeps one fact's edit from bleeding into another's.
const std::array<RelationSpec, 25> kRelations = {{
    {"capital",
     {"capital of %s", "%s capital", "the capital of %s", "name the capital of %s"}},
    {"leader",
     {"leader of %s", "%s leader", "who leads %s", "name the leader of %s"}},
    {"language",
     {"language of %s", "%s language", "which language in %s", "name the language of %s"}},
    {"currency",
     {"currency of %s", "%s currency", "which currency in %s", "name the currency of %s"}},
    {"founder",
     {"founder of %s", "%s founder", "who founded %s", "name the founder of %s"}},
    {"color",
     {"color of %s", "%s color", "which color is %s", "name the color of %s"}},
    {"location",
     {"region of %s", "%s region", "where is %s", "name the region of %s"}},
    {"product",
     {"product of %s", "%s product", "what does %s make", "name the product of %s"}},
    {"sport",
     {"sport of %s", "%s sport", "which sport for %s", "name the sport of %s"}},
    {"river",
     {"river of %s", "%s river", "which river in %s", "name the river of %s"}},
    {"animal",
     {"animal of %s", "%s animal", "which animal in %s", "name the animal of %s"}},
    {"food",
     {"food of %s", "%s food", "which food in %s", "name the food of %s"}},
    {"metal",
     {"metal of %s", "%s metal", "which metal in %s", "name the metal of %s"}},
    {"mountain",
     {"mountain of %s", "%s mountain", "which mountain near %s", "name the mountain of %s"}},
    {"festival",
     {"festival of %s", "%s festival", "which festival in %s", "name the festival of %s"}},
    {"instrument",
     {"instrument of %s", "%s instrument", "which instrument for %s",
      "name the instrument of %s"}},
    {"crop",
     {"crop of %s", "%s crop", "which crop in %s", "name the crop of %s"}},
    {"drink",
     {"drink of %s", "%s drink", "which drink in %s", "name the drink of %s"}},
    {"dance",
     {"dance of %s", "%s dance", "which dance in %s", "name the dance of %s"}},
    {"stone",
     {"stone of %s", "%s stone", "which stone in %s", "name the stone of %s"}},
    {"tree",
     {"tree of %s", "%s tree", "which tree in %s", "name the tree of %s"}},
    {"bird",
     {"bird of %s", "%s bird", "which bird in %s", "name the bird of %s"}},
    {"ship",
     {"ship of %s", "%s ship", "which ship from %s", "name the ship of %s"}},
    {"tool",
     {"tool of %s", "%s tool", "which tool from %s", "name the tool of %s"}},
    {"cloth",
     {"cloth of %s", "%s cloth", "which cloth from %s", "name the cloth of %s"}},
}};

const std::array<const char*, 12> kSubjectSyllables = {
    "ka", "ro", "mi", "ta", "zu", "ne", "vo", "li", "sha", "dor", "bel", "tin"};
const std::array<const char*, 12> kObjectSyllables = {
    "pol", "gar", "wen", "fyn", "lum", "dra", "kel", "osh", "brin", "tur", "maq", "zef"};

// Every relation answers from its own small pool of reusable object words, so
// an answer is always in-distribution for its question type and the model's
// prior at an untrained (subject, relation) pair spreads over that relation's
// candidates instead of concentrating on one deep competitor.
constexpr std::size_t kObjectsPerRelation = 16;

std::string fill_template(const char* tpl, const std::string& subject) {
  std::string s(tpl);
  const auto pos = s.find("%s");
  s.replace(pos, 2, subject);
  return s;
}

template <std::size_t N>
std::string make_word(Rng& rng, const std::array<const char*, N>& syllables,
                      std::size_t n_syllables) {
  std::string w;
  for (std::size_t i = 0; i < n_syllables; ++i) w += syllables[rng.below(N)];
  return w;
}

bool contains_word(const std::string& text, const std::string& word) {
  for (const auto& w : tokenize(text)) {
    if (w == word) return true;
  }
  return false;
}

nlohmann::json parse_line(const std::string& line, std::size_t line_no) {
  nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
  if (obj.is_discarded() || !obj.is_object()) {
    throw ParseError("line " + std::to_string(line_no) + ": not a JSON object");
  }
  return obj;
}

std::string get_string_field(const nlohmann::json& obj, const char* key,
                             std::size_t line_no) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw ParseError("line " + std::to_string(line_no) + ": missing string field '" +
                     key + "'");
  }
  return it->get<std::string>();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  return in;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> sorted_words) : words_(std::move(sorted_words)) {
  for (std::size_t i = 0; i + 1 < words_.size(); ++i) {
    if (!(words_[i] < words_[i + 1])) {
      throw VocabularyError("vocabulary words must be sorted and unique");
    }
  }
  for (std::size_t i = 0; i < words_.size(); ++i) {
    index_[words_[i]] = static_cast<int>(n_special + i);
  }
}

int Vocabulary::id_of(const std::string& word, bool strict) const {
  const auto it = index_.find(word);
  if (it != index_.end()) return it->second;
  if (strict) throw EncodingError("unknown word '" + word + "'");
  return unk_id;
}

const std::string& Vocabulary::word_of(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= size()) {
    throw VocabularyError("token id " + std::to_string(id) + " out of range");
  }
  if (static_cast<std::size_t>(id) < n_special) return kSpecialNames[static_cast<std::size_t>(id)];
  return words_[static_cast<std::size_t>(id) - n_special];
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!word.empty()) out.push_back(std::move(word));
      word.clear();
    } else {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  if (!word.empty()) out.push_back(std::move(word));
  return out;
}

Vocabulary build_vocab(const std::vector<std::string>& corpus) {
  if (corpus.empty()) throw EmptyBatchError("build_vocab: empty corpus");
  std::set<std::string> words;
  for (const auto& text : corpus) {
    for (auto& w : tokenize(text)) words.insert(std::move(w));
  }
  return Vocabulary(std::vector<std::string>(words.begin(), words.end()));
}

EditInstance encode_qa(const Vocabulary& vocab, const std::string& prompt,
                       const std::string& answer, bool strict) {
  EditInstance inst;
  for (const auto& w : tokenize(prompt)) inst.prompt_tokens.push_back(vocab.id_of(w, strict));
  inst.prompt_tokens.push_back(Vocabulary::sep_id);
  for (const auto& w : tokenize(answer)) inst.answer_tokens.push_back(vocab.id_of(w, strict));
  inst.answer_tokens.push_back(Vocabulary::end_id);
  return inst;
}

EditInstance encode(const Vocabulary& vocab, const EditRecord& record, bool strict) {
  return encode_qa(vocab, record.edit_prompt, record.answer, strict);
}

std::string decode(const Vocabulary& vocab, const std::vector<int>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += vocab.word_of(tokens[i]);
  }
  return out;
}

SyntheticData gen_synthetic(std::size_t n_base_facts, std::size_t n_edit_facts,
                            std::size_t templates_per_relation, std::uint64_t seed) {
  if (n_base_facts < 1 || n_edit_facts < 1) {
    throw GenerationError("gen_synthetic: fact counts must be >= 1");
  }
  if (templates_per_relation < 2) {
    throw GenerationError("gen_synthetic: need at least 2 templates per relation "
                          "so a rephrase can differ from the edit prompt");
  }
  if (templates_per_relation > kRelations[0].templates.size()) {
    throw GenerationError("gen_synthetic: template exhaustion: " +
                          std::to_string(templates_per_relation) + " requested, only " +
                          std::to_string(kRelations[0].templates.size()) + " provided");
  }

  Rng rng(seed);
  const std::size_t n_rel = kRelations.size();
  const std::size_t base_rels = 6;                 // per subject
  const std::size_t edit_rels = n_rel - base_rels;  // per subject

  // One disjoint object pool per relation. Three syllables: the pools need
  // n_rel * kObjectsPerRelation distinct words, more than two syllables of
  // this alphabet can supply.
  std::set<std::string> used_objects;
  std::vector<std::vector<std::string>> object_pool(n_rel);
  for (auto& pool : object_pool) {
    while (pool.size() < kObjectsPerRelation) {
      const std::string w = make_word(rng, kObjectSyllables, 3);
      if (used_objects.insert(w).second) pool.push_back(w);
    }
  }
  // Base and edit answers both cycle their relation's pool (from independent
  // shuffled orders) instead of sampling it: exactly balanced counts keep the
  // model's relation prior flat over the pool, so no sibling word starts with
  // a head start at pairs the stream will edit, and any contiguous block of
  // edits spreads its targets evenly over the plausible answers.
  std::vector<std::vector<std::string>> base_order(object_pool);
  for (auto& order : base_order) rng.shuffle(order);
  std::vector<std::size_t> base_cursor(n_rel, 0);
  auto make_object = [&](std::size_t rel) {
    return base_order[rel][base_cursor[rel]++ % kObjectsPerRelation];
  };
  std::vector<std::size_t> edit_cursor(n_rel, 0);
  auto next_edit_object = [&](std::size_t rel) {
    return object_pool[rel][edit_cursor[rel]++ % kObjectsPerRelation];
  };

  // Subjects come in two disjoint groups. Edit subjects carry exactly one
  // edit each, so no subject is hit twice by the stream, and one base fact
  // each, so their word embeddings are trained (untrained entity words leave
  // questions template-dominated and same-relation feature rows collinear).
  // Base-only subjects supply the unrelated probes and the held-out facts;
  // they never share a subject with any edit, which removes the heaviest
  // collateral channel — subject-keyed writes landing on probe questions.
  const std::size_t n_edit_subjects = n_edit_facts;
  const std::size_t base_for_edits = std::min(n_edit_subjects, n_base_facts);
  const std::size_t n_base_only =
      (n_base_facts - base_for_edits + base_rels - 1) / base_rels;
  const std::size_t n_subjects = n_base_only + n_edit_subjects;

  // Two-word subjects: entity names carry enough tokens to dominate the
  // question tail right before the separator. Every subject word is used by
  // exactly one subject — sharing words across subjects lets the model carry
  // one subject's trained answers over to another's untrained pairs, which
  // entrenches competitors exactly where edits must win. Four syllables: two
  // words per subject need more distinct words than three syllables supply.
  std::set<std::string> used;
  std::vector<std::string> subjects;
  while (subjects.size() < n_subjects) {
    const std::string a = make_word(rng, kSubjectSyllables, 4);
    if (!used.insert(a).second) continue;
    std::string b = make_word(rng, kSubjectSyllables, 4);
    while (!used.insert(b).second) b = make_word(rng, kSubjectSyllables, 4);
    subjects.push_back(a + ' ' + b);
  }

  // Per subject, a shuffled relation order: the first base_rels entries are
  // base candidates, the rest are edit candidates. A (subject, relation)
  // pair can therefore never appear on both sides.
  std::vector<std::vector<std::size_t>> rel_order(n_subjects);
  for (auto& order : rel_order) {
    order.resize(n_rel);
    for (std::size_t r = 0; r < n_rel; ++r) order[r] = r;
    rng.shuffle(order);
  }

  // Base-only subjects first (round-robin so every one is trained even when
  // the budget runs short), then one base fact per edit subject.
  std::vector<FactTriple> all_base;
  const std::size_t base_only_budget = n_base_facts - base_for_edits;
  for (std::size_t round = 0; round < base_rels && all_base.size() < base_only_budget;
       ++round) {
    for (std::size_t s = 0; s < n_base_only && all_base.size() < base_only_budget; ++s) {
      const std::size_t rel = rel_order[s][round];
      all_base.push_back({subjects[s], kRelations[rel].name, make_object(rel)});
    }
  }
  const std::size_t n_base_only_facts = all_base.size();
  for (std::size_t e = 0; e < n_edit_subjects && all_base.size() < n_base_facts; ++e) {
    const std::size_t s = n_base_only + e;
    const std::size_t rel = rel_order[s][0];
    all_base.push_back({subjects[s], kRelations[rel].name, make_object(rel)});
  }

  std::vector<FactTriple> edit_facts;
  for (std::size_t e = 0; e < n_edit_facts; ++e) {
    const std::size_t s = n_base_only + e;
    const std::size_t rel = rel_order[s][base_rels];
    edit_facts.push_back({subjects[s], kRelations[rel].name, next_edit_object(rel)});
  }

  // Hold out ~5% of base facts from pretraining for the perplexity probe.
  // Only base-only facts are eligible: holding out an edit subject's single
  // fact would leave its entity words untrained.
  std::vector<std::size_t> base_idx(n_base_only_facts);
  for (std::size_t i = 0; i < base_idx.size(); ++i) base_idx[i] = i;
  rng.shuffle(base_idx);
  const std::size_t n_heldout = std::min(all_base.size() / 20, n_base_only_facts);
  std::vector<bool> is_heldout(all_base.size(), false);
  for (std::size_t i = 0; i < n_heldout; ++i) is_heldout[base_idx[i]] = true;

  SyntheticData out;
  std::map<std::string, std::size_t> rel_index;
  for (std::size_t r = 0; r < n_rel; ++r) rel_index[kRelations[r].name] = r;

  for (std::size_t i = 0; i < all_base.size(); ++i) {
    const FactTriple& f = all_base[i];
    const auto& templates = kRelations[rel_index[f.relation]].templates;
    if (is_heldout[i]) {
      out.heldout_facts.push_back(f);
      out.heldout_qa.push_back({fill_template(templates[0], f.subject), f.object});
      continue;
    }
    out.base_facts.push_back(f);
    // Edit subjects' lone facts train on one template only: enough to give
    // the entity words real embeddings, weak enough that the fact doesn't
    // become the model's answer to every other question about that subject.
    const std::size_t n_tpl = i < n_base_only_facts ? templates_per_relation : 1;
    for (std::size_t t = 0; t < n_tpl; ++t) {
      out.train_qa.push_back({fill_template(templates[t], f.subject), f.object});
    }
    out.probe_qa.push_back({fill_template(templates[0], f.subject), f.object});
  }

  // Unrelated probes quote base-only facts (the non-held-out prefix of
  // base_facts), so no probe shares its subject with any edit in the stream.
  const std::size_t unrelated_pool = n_base_only_facts - n_heldout;

  for (const FactTriple& f : edit_facts) {
    const auto& templates = kRelations[rel_index[f.relation]].templates;
    const std::size_t t_edit = rng.below(templates_per_relation);
    std::size_t t_rephrase = rng.below(templates_per_relation - 1);
    if (t_rephrase >= t_edit) ++t_rephrase;

    const FactTriple& unrelated =
        out.base_facts[rng.below(unrelated_pool > 0 ? unrelated_pool
                                                    : out.base_facts.size())];
    const auto& u_templates = kRelations[rel_index[unrelated.relation]].templates;

    EditRecord rec;
    rec.edit_prompt = fill_template(templates[t_edit], f.subject);
    rec.answer = f.object;
    rec.rephrase_prompt = fill_template(templates[t_rephrase], f.subject);
    rec.unrelated_prompt = fill_template(u_templates[0], unrelated.subject);
    rec.unrelated_answer = unrelated.object;
    for (const auto& word : tokenize(f.subject)) {
      if (!contains_word(rec.edit_prompt, word)) {
        throw GenerationError("gen_synthetic: subject missing from edit prompt");
      }
    }
    out.edits.push_back(std::move(rec));
  }
  out.edit_facts = std::move(edit_facts);

  validate_records(out.edits);
  return out;
}

void validate_records(const std::vector<EditRecord>& records) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const EditRecord& r = records[i];
    const std::string where = "record " + std::to_string(i) + ": ";
    if (r.edit_prompt.empty() || r.answer.empty() || r.rephrase_prompt.empty() ||
        r.unrelated_prompt.empty() || r.unrelated_answer.empty()) {
      throw GenerationError(where + "empty field");
    }
    if (r.rephrase_prompt == r.edit_prompt) {
      throw GenerationError(where + "rephrase equals edit prompt");
    }
    for (const auto& word : tokenize(r.answer)) {
      if (contains_word(r.edit_prompt, word) || contains_word(r.rephrase_prompt, word) ||
          contains_word(r.unrelated_prompt, word)) {
        throw GenerationError(where + "answer word '" + word + "' leaks into a prompt");
      }
    }
  }
}

std::vector<EditRecord> load_records(const std::string& path, bool strict) {
  std::ifstream in = open_in(path);
  std::vector<EditRecord> out;
  std::string line;
  std::size_t line_no = 0;
  static const std::set<std::string> kFields = {
      "edit_prompt", "answer", "rephrase_prompt", "unrelated_prompt", "unrelated_answer"};
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const nlohmann::json obj = parse_line(line, line_no);
    if (strict) {
      for (const auto& [key, value] : obj.items()) {
        if (!kFields.count(key)) {
          throw ParseError("line " + std::to_string(line_no) + ": unknown field '" +
                           key + "'");
        }
      }
    }
    EditRecord r;
    r.edit_prompt = get_string_field(obj, "edit_prompt", line_no);
    r.answer = get_string_field(obj, "answer", line_no);
    r.rephrase_prompt = get_string_field(obj, "rephrase_prompt", line_no);
    r.unrelated_prompt = get_string_field(obj, "unrelated_prompt", line_no);
    r.unrelated_answer = get_string_field(obj, "unrelated_answer", line_no);
    out.push_back(std::move(r));
  }
  return out;
}

void save_records(const std::vector<EditRecord>& records, const std::string& path) {
  std::ofstream out = open_out(path);
  for (const auto& r : records) {
    nlohmann::ordered_json obj;
    obj["edit_prompt"] = r.edit_prompt;
    obj["answer"] = r.answer;
    obj["rephrase_prompt"] = r.rephrase_prompt;
    obj["unrelated_prompt"] = r.unrelated_prompt;
    obj["unrelated_answer"] = r.unrelated_answer;
    out << obj.dump() << '\n';
  }
}

std::vector<QaPair> load_qa(const std::string& path) {
  std::ifstream in = open_in(path);
  std::vector<QaPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const nlohmann::json obj = parse_line(line, line_no);
    out.push_back({get_string_field(obj, "prompt", line_no),
                   get_string_field(obj, "answer", line_no)});
  }
  return out;
}

void save_qa(const std::vector<QaPair>& pairs, const std::string& path) {
  std::ofstream out = open_out(path);
  for (const auto& qa : pairs) {
    nlohmann::ordered_json obj;
    obj["prompt"] = qa.prompt;
    obj["answer"] = qa.answer;
    out << obj.dump() << '\n';
  }
}

std::vector<TrainSequence> qa_sequences(const Vocabulary& vocab,
                                        const std::vector<QaPair>& pairs) {
  std::vector<TrainSequence> out;
  out.reserve(pairs.size());
  for (const auto& qa : pairs) {
    const EditInstance inst = encode_qa(vocab, qa.prompt, qa.answer);
    out.push_back({inst.full(), inst.label_mask()});
  }
  return out;
}

std::vector<TrainSequence> lm_sequences(const Vocabulary& vocab,
                                        const std::vector<QaPair>& pairs) {
  std::vector<TrainSequence> out;
  out.reserve(pairs.size());
  for (const auto& qa : pairs) {
    const EditInstance inst = encode_qa(vocab, qa.prompt, qa.answer);
    std::vector<bool> mask(inst.full().size(), true);
    mask[0] = false;  // nothing predicts the first token
    out.push_back({inst.full(), std::move(mask)});
  }
  return out;
}

}  // namespace uled
