// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/synth.hpp"

#include <cmath>

#include "attrdialog/error.hpp"
#include "attrdialog/rng.hpp"

namespace attrdialog {

namespace {

constexpr double kRowTolerance = 1e-9;

void check_row(const std::vector<double>& row, std::size_t width, const std::string& what) {
  if (row.size() != width) {
    throw ArgumentError(what + ": expected " + std::to_string(width) + " entries, got " +
                        std::to_string(row.size()));
  }
  double total = 0.0;
  for (double p : row) {
    if (!(p >= 0.0)) throw ArgumentError(what + ": negative or NaN probability");
    total += p;
  }
  if (std::abs(total - 1.0) > kRowTolerance) {
    throw ArgumentError(what + ": probabilities sum to " + std::to_string(total));
  }
}

std::size_t sample_index(const std::vector<double>& probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // u landed in the rounding gap above the last cumulative sum.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return probs.size() - 1;
}

std::string replace_topic(const std::string& text, const std::string& topic) {
  static const std::string kSlot = "{topic}";
  std::string out = text;
  for (auto pos = out.find(kSlot); pos != std::string::npos; pos = out.find(kSlot, pos)) {
    out.replace(pos, kSlot.size(), topic);
    pos += topic.size();
  }
  return out;
}

}  // namespace

void SynthSpec::validate() const {
  if (min_length < 2 || max_length < min_length) {
    throw ArgumentError("synth: need 2 <= min_length <= max_length");
  }
  for (const auto& f : families) {
    const std::size_t L = f.labels.size();
    if (L == 0) throw ArgumentError("synth: family " + f.name + " has no labels");
    if (f.transitions.size() != L + 1) {
      throw ArgumentError("synth: family " + f.name + " transition table needs " +
                          std::to_string(L + 1) + " prev2 blocks");
    }
    for (std::size_t a = 0; a <= L; ++a) {
      if (f.transitions[a].size() != L + 1) {
        throw ArgumentError("synth: family " + f.name + " transition block " +
                            std::to_string(a) + " needs " + std::to_string(L + 1) + " rows");
      }
      for (std::size_t b = 0; b <= L; ++b) {
        check_row(f.transitions[a][b], L,
                  "synth: " + f.name + " transitions[" + std::to_string(a) + "][" +
                      std::to_string(b) + "]");
      }
    }
    if (f.templates.size() != L) {
      throw ArgumentError("synth: family " + f.name + " needs templates for every label");
    }
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> probs;
      for (const auto& t : f.templates[l]) {
        probs.push_back(t.probability);
        if (t.text.find("{topic}") != std::string::npos && topics.empty()) {
          throw ArgumentError("synth: template uses {topic} but no topics are defined");
        }
      }
      check_row(probs, f.templates[l].size(), "synth: " + f.name + " templates of " + f.labels[l]);
    }
  }
}

AttributeSchema SynthSpec::schema() const {
  std::vector<AttributeFamily> out;
  for (const auto& f : families) out.push_back(AttributeFamily::make(f.name, f.labels));
  return AttributeSchema(std::move(out));
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  SynthSpec spec;
  spec.dialogs = j.value("dialogs", spec.dialogs);
  spec.min_length = j.value("min_length", spec.min_length);
  spec.max_length = j.value("max_length", spec.max_length);
  spec.topics = j.value("topics", std::vector<std::string>{});
  for (const auto& fj : j.at("families")) {
    SynthFamily f;
    f.name = fj.at("name").get<std::string>();
    f.labels = fj.at("labels").get<std::vector<std::string>>();
    const std::size_t L = f.labels.size();
    if (fj.contains("transitions")) {
      f.transitions = fj["transitions"].get<std::vector<std::vector<std::vector<double>>>>();
    } else if (fj.contains("first_order")) {
      auto rows = fj["first_order"].get<std::vector<std::vector<double>>>();
      f.transitions.assign(L + 1, rows);
    } else {
      throw FormatError("synth: family " + f.name + " needs \"transitions\" or \"first_order\"");
    }
    const auto& tj = fj.at("templates");
    for (const auto& label : f.labels) {
      std::vector<SynthTemplate> templates;
      if (!tj.contains(label)) throw FormatError("synth: no templates for label " + label);
      for (const auto& t : tj.at(label)) {
        templates.push_back({t.at("text").get<std::string>(), t.at("p").get<double>()});
      }
      f.templates.push_back(std::move(templates));
    }
    spec.families.push_back(std::move(f));
  }
  spec.validate();
  return spec;
}

nlohmann::json SynthSpec::to_json() const {
  nlohmann::json family_list = nlohmann::json::array();
  for (const auto& f : families) {
    nlohmann::json templates = nlohmann::json::object();
    for (std::size_t l = 0; l < f.labels.size(); ++l) {
      nlohmann::json list = nlohmann::json::array();
      for (const auto& t : f.templates[l]) list.push_back({{"text", t.text}, {"p", t.probability}});
      templates[f.labels[l]] = std::move(list);
    }
    family_list.push_back({{"name", f.name},
                        {"labels", f.labels},
                        {"transitions", f.transitions},
                        {"templates", std::move(templates)}});
  }
  return {{"families", std::move(family_list)},
          {"topics", topics},
          {"dialogs", dialogs},
          {"min_length", min_length},
          {"max_length", max_length}};
}

std::string render_utterance(const SynthSpec& spec, const SynthTrace& trace, std::size_t t) {
  std::string text;
  const std::string topic =
      trace.topic >= 0 ? spec.topics[static_cast<std::size_t>(trace.topic)] : std::string();
  for (std::size_t k = 0; k < spec.families.size(); ++k) {
    const auto& f = spec.families[k];
    const auto& tmpl = f.templates[static_cast<std::size_t>(trace.labels[t][k])]
                                  [static_cast<std::size_t>(trace.templates[t][k])];
    if (!text.empty()) text += ' ';
    text += replace_topic(tmpl.text, topic);
  }
  return text;
}

SynthResult synthesize_corpus(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  SynthResult result;
  std::uniform_int_distribution<std::size_t> length_dist(spec.min_length, spec.max_length);
  for (std::size_t d = 0; d < spec.dialogs; ++d) {
    SynthTrace trace;
    const std::size_t length = length_dist(rng);
    if (!spec.topics.empty()) {
      trace.topic = static_cast<int>(
          std::uniform_int_distribution<std::size_t>(0, spec.topics.size() - 1)(rng));
    }
    RawDialog dialog;
    for (std::size_t t = 0; t < length; ++t) {
      std::vector<int> labels, templates;
      for (std::size_t k = 0; k < spec.families.size(); ++k) {
        const auto& f = spec.families[k];
        const std::size_t prev1 =
            t >= 1 ? static_cast<std::size_t>(trace.labels[t - 1][k]) : f.start();
        const std::size_t prev2 =
            t >= 2 ? static_cast<std::size_t>(trace.labels[t - 2][k]) : f.start();
        const std::size_t label = sample_index(f.transitions[prev2][prev1], rng);
        std::vector<double> probs;
        for (const auto& tmpl : f.templates[label]) probs.push_back(tmpl.probability);
        labels.push_back(static_cast<int>(label));
        templates.push_back(static_cast<int>(sample_index(probs, rng)));
      }
      trace.labels.push_back(std::move(labels));
      trace.templates.push_back(std::move(templates));
      RawUtterance u;
      u.text = render_utterance(spec, trace, t);
      for (std::size_t k = 0; k < spec.families.size(); ++k) {
        u.attrs[spec.families[k].name] =
            spec.families[k].labels[static_cast<std::size_t>(trace.labels[t][k])];
      }
      dialog.utterances.push_back(std::move(u));
    }
    result.corpus.push_back(std::move(dialog));
    result.traces.push_back(std::move(trace));
  }
  return result;
}

double trace_log_likelihood(const SynthSpec& spec, const SynthTrace& trace) {
  double total = -std::log(static_cast<double>(spec.max_length - spec.min_length + 1));
  if (!spec.topics.empty()) total -= std::log(static_cast<double>(spec.topics.size()));
  for (std::size_t t = 0; t < trace.labels.size(); ++t) {
    for (std::size_t k = 0; k < spec.families.size(); ++k) {
      const auto& f = spec.families[k];
      const std::size_t prev1 =
          t >= 1 ? static_cast<std::size_t>(trace.labels[t - 1][k]) : f.start();
      const std::size_t prev2 =
          t >= 2 ? static_cast<std::size_t>(trace.labels[t - 2][k]) : f.start();
      const auto label = static_cast<std::size_t>(trace.labels[t][k]);
      total += std::log(f.transitions[prev2][prev1][label]);
      total += std::log(
          f.templates[label][static_cast<std::size_t>(trace.templates[t][k])].probability);
    }
  }
  return total;
}

}  // namespace attrdialog
