#include "isearle/concepts.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "isearle/errors.hpp"

namespace isearle {

namespace {

constexpr std::string_view kPromptPrefix = "a photo of ";

std::string trim_lower(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '\'' || u >= 0x80;
}

bool boundary_after(std::string_view text, std::size_t pos) { return pos >= text.size() || !is_word_char(text[pos]); }

bool boundary_before(std::string_view text, std::size_t pos) { return pos == 0 || !is_word_char(text[pos - 1]); }

bool has_prefix_concept(std::string_view phrase, std::string_view concept_name) {
  const std::string prefix = concept_prompt(concept_name);
  return phrase.starts_with(prefix) && boundary_after(phrase, prefix.size());
}

std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

}  // namespace

std::string concept_prompt(std::string_view concept_name) {
  return std::string(kPromptPrefix) + std::string(concept_name);
}

ConceptVocabulary ConceptVocabulary::build(std::span<const std::string> names, const Backbone& backbone) {
  std::vector<std::string> unique;
  std::set<std::string, std::less<>> seen;
  for (const auto& raw : names) {
    auto name = trim_lower(raw);
    if (name.empty() || !seen.insert(name).second) continue;
    unique.push_back(std::move(name));
  }
  Matrix embeddings(static_cast<Eigen::Index>(unique.size()), backbone.info().embed_dim);
  for (std::size_t i = 0; i < unique.size(); ++i)
    embeddings.row(static_cast<Eigen::Index>(i)) =
        backbone.encode_text(concept_prompt(unique[i])).as_unit().values.transpose();
  ConceptVocabulary vocab;
  vocab.entries = std::move(unique);
  vocab.text_embeddings = std::move(embeddings);
  return vocab;
}

ConceptVocabulary ConceptVocabulary::from_embeddings(std::vector<std::string> names, const Matrix& embeddings) {
  if (static_cast<Eigen::Index>(names.size()) != embeddings.rows())
    throw InputError("vocabulary: name count does not match embedding rows");
  std::set<std::string, std::less<>> seen(names.begin(), names.end());
  if (seen.size() != names.size()) throw InputError("vocabulary entries must be unique");
  ConceptVocabulary vocab;
  vocab.entries = std::move(names);
  vocab.text_embeddings = embeddings;
  for (Eigen::Index r = 0; r < embeddings.rows(); ++r)
    vocab.text_embeddings.row(r) = normalized(embeddings.row(r).transpose()).transpose();
  return vocab;
}

std::vector<std::string> read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    names.push_back(line);
  }
  return names;
}

std::vector<std::string> assign_concepts(const EmbeddingVector& image, const ConceptVocabulary& vocab,
                                         std::size_t k) {
  if (k > vocab.size()) throw InputError("k exceeds vocabulary size");
  if (image.size() != vocab.text_embeddings.cols()) throw InputError("embedding width mismatch");
  const Vector x = image.normalized ? image.values : normalized(image.values);
  const Vector scores = vocab.text_embeddings * x;
  std::vector<std::size_t> order(vocab.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double sa = scores[static_cast<Eigen::Index>(a)];
                      const double sb = scores[static_cast<Eigen::Index>(b)];
                      return sa != sb ? sa > sb : a < b;
                    });
  std::vector<std::string> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(vocab.entries[order[i]]);
  return out;
}

void PhraseBank::add(const std::string& concept_name, std::vector<std::string> phrases) {
  for (std::size_t i = 0; i < phrases.size(); ++i)
    if (!has_prefix_concept(phrases[i], concept_name))
      throw ValidationError("phrase " + std::to_string(i) + " for concept '" + concept_name +
                            "' does not begin with '" + concept_prompt(concept_name) + "'");
  bank_[concept_name] = std::move(phrases);
}

const std::vector<std::string>& PhraseBank::phrases(std::string_view concept_name) const {
  const auto it = bank_.find(concept_name);
  if (it == bank_.end()) throw LookupError("concept '" + std::string(concept_name) + "' not in phrase bank");
  return it->second;
}

PhraseBank PhraseBank::parse(std::istream& in, std::size_t expected_count) {
  PhraseBank bank;
  std::string line;
  std::size_t line_no = 0;
  std::size_t count = expected_count;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed phrase record: ") + e.what(), line_no);
    }
    if (!record.is_object() || !record.contains("concept") || !record["concept"].is_string() ||
        !record.contains("phrases") || !record["phrases"].is_array())
      throw ParseError("phrase record needs 'concept' (string) and 'phrases' (array)", line_no);
    std::vector<std::string> phrases;
    for (const auto& p : record["phrases"]) {
      if (!p.is_string()) throw ParseError("phrases must be strings", line_no);
      phrases.push_back(p.get<std::string>());
    }
    const auto name = record["concept"].get<std::string>();
    if (bank.contains(name)) throw ParseError("duplicate concept '" + name + "'", line_no);
    if (count == 0) count = phrases.size();
    if (phrases.size() != count)
      throw ValidationError("concept '" + name + "' has " + std::to_string(phrases.size()) +
                            " phrases, expected " + std::to_string(count) + " (line " +
                            std::to_string(line_no) + ")");
    try {
      bank.add(name, std::move(phrases));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return bank;
}

PhraseBank PhraseBank::load(const std::filesystem::path& path, std::size_t expected_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open phrase bank " + path.string());
  return parse(in, expected_count);
}

void PhraseBank::write(std::ostream& out) const {
  for (const auto& [name, phrases] : bank_)
    out << nlohmann::json{{"concept", name}, {"phrases", phrases}}.dump() << '\n';
}

void PhraseBank::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write phrase bank " + path.string());
  write(out);
}

SampledPhrase sample_regularization_phrase(std::span<const std::string> concepts, const PhraseBank& bank,
                                           Rng& rng) {
  if (concepts.empty()) throw InputError("no concepts to sample from");
  const auto& name = concepts[uniform_index(rng, concepts.size())];
  const auto& phrases = bank.phrases(name);
  if (phrases.empty()) throw LookupError("concept '" + name + "' has no phrases");
  return {phrases[uniform_index(rng, phrases.size())], name};
}

std::string substitute_pseudo_word(std::string_view phrase, std::string_view concept_name,
                                   std::string_view label) {
  if (concept_name.empty()) throw InputError("empty concept");
  std::size_t pos = std::string_view::npos;
  if (has_prefix_concept(phrase, concept_name)) {
    pos = kPromptPrefix.size();
  } else {
    for (auto p = phrase.find(concept_name); p != std::string_view::npos; p = phrase.find(concept_name, p + 1))
      if (boundary_before(phrase, p) && boundary_after(phrase, p + concept_name.size())) {
        pos = p;
        break;
      }
  }
  if (pos == std::string_view::npos)
    throw InputError("concept '" + std::string(concept_name) + "' not found in phrase");
  std::string out(phrase.substr(0, pos));
  out += label;
  out += phrase.substr(pos + concept_name.size());
  return out;
}

PhraseBank generate_phrase_bank(std::span<const std::string> concepts, const PhraseGenConfig& config,
                                const PhraseGenerator& generator) {
  PhraseBank bank;
  for (const auto& name : concepts) {
    const auto prompt = concept_prompt(name);
    auto lines = generator(prompt, config);
    if (lines.size() != config.phrases_per_concept)
      throw ValidationError("generator returned " + std::to_string(lines.size()) + " phrases for '" + name +
                            "', expected " + std::to_string(config.phrases_per_concept));
    for (auto& line : lines) {
      if (!line.starts_with(prompt)) line = prompt + (line.empty() || line.front() == ' ' ? "" : " ") + line;
    }
    bank.add(name, std::move(lines));
  }
  return bank;
}

std::vector<std::string> run_phrase_command(const std::string& prompt, const PhraseGenConfig& config) {
  if (config.command.empty()) throw InputError("phrase generation command not configured");
  std::string cmd = config.command;
  replace_all(cmd, "{prompt}", shell_quote(prompt));
  replace_all(cmd, "{n}", std::to_string(config.phrases_per_concept));
  std::ostringstream temp;
  temp << config.temperature;
  replace_all(cmd, "{temperature}", temp.str());
  replace_all(cmd, "{max_tokens}", std::to_string(config.max_tokens));
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw IoError("cannot run phrase generator");
  std::string output;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) output.append(buf, n);
  const int status = pclose(pipe);
  if (status != 0) throw IoError("phrase generator exited with status " + std::to_string(status));
  std::vector<std::string> lines;
  std::istringstream in(output);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

}  // namespace isearle
