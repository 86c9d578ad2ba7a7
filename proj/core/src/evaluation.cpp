// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "attrdialog/error.hpp"

namespace attrdialog {

namespace {

// Neumaier summation in extended precision. Together with the extended
// log-softmax below, a uniform model comes out at exactly |V|.
struct CompensatedSum {
  long double sum = 0.0L;
  long double carry = 0.0L;
  void add(long double x) {
    const long double t = sum + x;
    carry += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  }
  long double value() const { return sum + carry; }
};

long double extended_nll(const Tensor& logits, std::size_t row, int target) {
  const std::size_t cols = logits.shape()[1];
  const double* in = logits.values().data() + row * cols;
  const long double mx = *std::max_element(in, in + cols);
  long double z = 0.0L;
  for (std::size_t c = 0; c < cols; ++c) z += std::exp(static_cast<long double>(in[c]) - mx);
  return std::log(z) - (static_cast<long double>(in[target]) - mx);
}

std::vector<int> strip_eos(std::vector<int> tokens) {
  while (!tokens.empty() &&
         (tokens.back() == Vocabulary::kEos || tokens.back() == Vocabulary::kPad)) {
    tokens.pop_back();
  }
  return tokens;
}

template <typename T>
double distinct_impl(std::span<const std::vector<T>> responses, std::size_t n) {
  if (n < 1) throw ArgumentError("distinct_n: n must be at least 1");
  std::set<std::vector<T>> seen;
  std::size_t total = 0;
  for (const auto& r : responses) {
    if (r.size() < n) continue;
    for (std::size_t i = 0; i + n <= r.size(); ++i) {
      seen.emplace(r.begin() + static_cast<std::ptrdiff_t>(i),
                   r.begin() + static_cast<std::ptrdiff_t>(i + n));
      ++total;
    }
  }
  if (total == 0) return 0.0;
  return static_cast<double>(seen.size()) / static_cast<double>(total);
}

std::vector<const std::vector<double>*> map_tokens(const std::vector<std::string>& tokens,
                                                   const WordVectors& wv, const char* side) {
  std::vector<const std::vector<double>*> out;
  for (const auto& t : tokens) {
    if (const auto* v = wv.lookup(t)) out.push_back(v);
  }
  if (out.empty()) {
    throw ArgumentError(std::string("embedding metrics: ") + side +
                        " has no tokens with word vectors");
  }
  return out;
}

std::vector<double> mean_vector(const std::vector<const std::vector<double>*>& vs,
                                std::size_t dim) {
  std::vector<double> m(dim, 0.0);
  for (const auto* v : vs) {
    for (std::size_t i = 0; i < dim; ++i) m[i] += (*v)[i];
  }
  for (double& x : m) x /= static_cast<double>(vs.size());
  return m;
}

std::vector<double> extrema_vector(const std::vector<const std::vector<double>*>& vs,
                                   std::size_t dim) {
  std::vector<double> e(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    double best = (*vs[0])[i];
    for (const auto* v : vs) {
      const double x = (*v)[i];
      if (std::abs(x) > std::abs(best) || (std::abs(x) == std::abs(best) && x > best)) best = x;
    }
    e[i] = best;
  }
  return e;
}

double greedy_direction(const std::vector<const std::vector<double>*>& from,
                        const std::vector<const std::vector<double>*>& to) {
  double total = 0.0;
  for (const auto* a : from) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto* b : to) best = std::max(best, cosine_similarity(*a, *b));
    total += best;
  }
  return total / static_cast<double>(from.size());
}

}  // namespace

PerplexityResult corpus_perplexity(const DialogModel& model, std::span<const Dialog> split,
                                   bool predicted_attributes) {
  PerplexityResult r;
  CompensatedSum nll;
  for (const auto& dialog : split) {
    for (std::size_t target = 1; target < dialog.size(); ++target) {
      auto prefix = model.context_prefix(dialog, target);
      ad::Graph g;
      ContextState ctx = model.encode_context(g, prefix);
      std::vector<int> attributes = dialog.utterances[target].attributes;
      if (predicted_attributes && !model.schema().empty()) {
        auto logits = model.attribute_logits(g, ctx);
        for (std::size_t k = 0; k < logits.size(); ++k) {
          auto v = logits[k].value().values();
          attributes[k] = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
        }
      }
      ConditioningVector c = model.build_conditioning(g, ctx, attributes);
      const auto& tokens = dialog.utterances[target].tokens;
      DecodeResult dec = model.decode_utterance_nll(g, c, tokens);
      for (std::size_t i = 0; i < dec.tokens; ++i) {
        nll.add(extended_nll(dec.logits.value(), i, tokens[i]));
      }
      r.tokens += dec.tokens;
      ++r.examples;
    }
  }
  if (r.tokens == 0) throw ArgumentError("perplexity: split has no (context, target) pairs");
  const long double total = nll.value();
  r.total_nll = static_cast<double>(total);
  r.perplexity = static_cast<double>(std::exp(total / static_cast<long double>(r.tokens)));
  return r;
}

double perplexity(const DialogModel& model, std::span<const Dialog> split,
                  bool predicted_attributes) {
  return corpus_perplexity(model, split, predicted_attributes).perplexity;
}

double distinct_n(std::span<const std::vector<int>> responses, std::size_t n) {
  return distinct_impl(responses, n);
}

double distinct_n(std::span<const std::vector<std::string>> responses, std::size_t n) {
  return distinct_impl(responses, n);
}

std::vector<double> generic_response_rate(std::span<const std::vector<int>> responses,
                                          std::span<const std::vector<int>> phrases) {
  if (phrases.empty()) throw ArgumentError("generic_response_rate: empty phrase list");
  std::vector<double> out;
  for (const auto& raw : phrases) {
    const std::vector<int> phrase = strip_eos(raw);
    if (phrase.empty()) throw ArgumentError("generic_response_rate: empty phrase");
    std::size_t hits = 0;
    for (const auto& r : responses) {
      if (r.size() >= phrase.size() && std::equal(phrase.begin(), phrase.end(), r.begin())) {
        ++hits;
      }
    }
    out.push_back(responses.empty() ? 0.0
                                    : 100.0 * static_cast<double>(hits) /
                                          static_cast<double>(responses.size()));
  }
  return out;
}

WordVectors WordVectors::parse(const std::string& text) {
  WordVectors wv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> values;
    std::string field;
    while (fields >> field) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw FormatError("word vectors line " + std::to_string(line_no) +
                          ": bad number '" + field + "'");
      }
    }
    if (values.empty()) {
      throw FormatError("word vectors line " + std::to_string(line_no) + ": no values");
    }
    if (wv.dim_ == 0) wv.dim_ = values.size();
    if (values.size() != wv.dim_) {
      throw FormatError("word vectors line " + std::to_string(line_no) + ": expected " +
                        std::to_string(wv.dim_) + " values, got " +
                        std::to_string(values.size()));
    }
    wv.table_[token] = std::move(values);
  }
  return wv;
}

WordVectors WordVectors::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open word vectors " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void WordVectors::add(const std::string& token, std::vector<double> vector) {
  if (dim_ == 0) dim_ = vector.size();
  if (vector.size() != dim_ || dim_ == 0) {
    throw ArgumentError("word vector for '" + token + "' has the wrong dimension");
  }
  table_[token] = std::move(vector);
}

const std::vector<double>* WordVectors::lookup(const std::string& token) const {
  auto it = table_.find(token);
  if (it == table_.end()) it = table_.find("<unk>");
  return it == table_.end() ? nullptr : &it->second;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("cosine_similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double embedding_average(const std::vector<std::string>& reference,
                         const std::vector<std::string>& hypothesis, const WordVectors& wv) {
  auto r = map_tokens(reference, wv, "reference");
  auto h = map_tokens(hypothesis, wv, "hypothesis");
  return cosine_similarity(mean_vector(r, wv.dim()), mean_vector(h, wv.dim()));
}

double embedding_greedy(const std::vector<std::string>& reference,
                        const std::vector<std::string>& hypothesis, const WordVectors& wv) {
  auto r = map_tokens(reference, wv, "reference");
  auto h = map_tokens(hypothesis, wv, "hypothesis");
  return 0.5 * (greedy_direction(r, h) + greedy_direction(h, r));
}

double embedding_extrema(const std::vector<std::string>& reference,
                         const std::vector<std::string>& hypothesis, const WordVectors& wv) {
  auto r = map_tokens(reference, wv, "reference");
  auto h = map_tokens(hypothesis, wv, "hypothesis");
  return cosine_similarity(extrema_vector(r, wv.dim()), extrema_vector(h, wv.dim()));
}

EmbeddingScores embedding_metrics(std::span<const TokenPair> pairs, const WordVectors& wv) {
  if (pairs.empty()) throw ArgumentError("embedding metrics: no pairs");
  EmbeddingScores s;
  for (const auto& [ref, hyp] : pairs) {
    s.average += embedding_average(ref, hyp, wv);
    s.greedy += embedding_greedy(ref, hyp, wv);
    s.extrema += embedding_extrema(ref, hyp, wv);
  }
  const double n = static_cast<double>(pairs.size());
  s.average /= n;
  s.greedy /= n;
  s.extrema /= n;
  return s;
}

std::vector<GeneratedResponse> generate_responses(const DialogModel& model,
                                                  std::span<const Dialog> dialogs,
                                                  const GenerationOptions& options,
                                                  Rng* rng) {
  std::vector<GeneratedResponse> out;
  for (std::size_t d = 0; d < dialogs.size(); ++d) {
    const Dialog& dialog = dialogs[d];
    const std::size_t first = options.last_turn_only ? dialog.size() - 1 : 1;
    for (std::size_t target = std::max<std::size_t>(first, 1); target < dialog.size(); ++target) {
      if (options.max_examples != 0 && out.size() >= options.max_examples) return out;
      auto prefix = model.context_prefix(dialog, target);
      GeneratedResponse r;
      r.dialog = d;
      r.target = target;
      r.attributes = model.choose_attributes(prefix, options.attribute_mode, rng);
      r.reference = strip_eos(dialog.utterances[target].tokens);
      r.response =
          strip_eos(model.respond(prefix, r.attributes, options.token_mode, options.max_len, rng));
      out.push_back(std::move(r));
    }
  }
  return out;
}

nlohmann::json evaluation_report(const DialogModel& model, const Vocabulary& vocab,
                                 std::span<const Dialog> split, const WordVectors* vectors,
                                 const DullSet* dull, const GenerationOptions& options,
                                 Rng* rng) {
  nlohmann::json report;
  const PerplexityResult ppl = corpus_perplexity(model, split);
  report["perplexity"] = ppl.perplexity;
  report["tokens"] = ppl.tokens;
  report["examples"] = ppl.examples;

  auto generated = generate_responses(model, split, options, rng);
  std::vector<std::vector<int>> responses;
  std::vector<TokenPair> pairs;
  for (const auto& g : generated) {
    responses.push_back(g.response);
    auto words = [&](const std::vector<int>& ids) {
      std::vector<std::string> w;
      for (int id : ids) w.push_back(vocab.token(id));
      return w;
    };
    pairs.emplace_back(words(g.reference), words(g.response));
  }
  report["responses"] = responses.size();
  report["distinct1"] = distinct_n(responses, 1);
  report["distinct2"] = distinct_n(responses, 2);
  if (vectors != nullptr && !pairs.empty()) {
    // Pairs where either side has no vectors are skipped and counted.
    std::vector<TokenPair> usable;
    for (const auto& p : pairs) {
      auto has_vector = [&](const std::vector<std::string>& side) {
        return std::any_of(side.begin(), side.end(),
                           [&](const std::string& t) { return vectors->lookup(t) != nullptr; });
      };
      if (has_vector(p.first) && has_vector(p.second)) usable.push_back(p);
    }
    report["embedding_pairs_skipped"] = pairs.size() - usable.size();
    if (usable.empty()) {
      report["emb_average"] = nullptr;
      report["emb_greedy"] = nullptr;
      report["emb_extrema"] = nullptr;
    } else {
      EmbeddingScores s = embedding_metrics(usable, *vectors);
      report["emb_average"] = s.average;
      report["emb_greedy"] = s.greedy;
      report["emb_extrema"] = s.extrema;
    }
  } else {
    report["emb_average"] = nullptr;
    report["emb_greedy"] = nullptr;
    report["emb_extrema"] = nullptr;
  }
  if (dull != nullptr && !dull->empty()) {
    auto rates = generic_response_rate(responses, dull->utterances);
    nlohmann::json per_phrase = nlohmann::json::object();
    double total = 0.0;
    for (std::size_t i = 0; i < rates.size(); ++i) {
      per_phrase[decode_tokens(dull->utterances[i], vocab)] = rates[i];
      total += rates[i];
    }
    report["generic_rate"] = per_phrase;
    report["generic_rate_total"] = total;
  }
  return report;
}

}  // namespace attrdialog
