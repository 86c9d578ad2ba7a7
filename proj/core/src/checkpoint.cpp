// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "attrdialog/error.hpp"

namespace attrdialog {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)]))
         << (8 * i);
  }
  return v;
}

void put_doubles(std::string& out, std::span<const double> values) {
  for (double x : values) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

std::vector<std::pair<std::string, Tensor>> collect(const ParameterSet& params) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.emplace_back(params.name(i), Tensor(params.tensor(i).shape(),
                                            std::vector<double>(params.tensor(i).values().begin(),
                                                                params.tensor(i).values().end())));
  }
  return out;
}

void copy_into(const Checkpoint& ckpt, ParameterSet& params) {
  std::map<std::string, const Tensor*> stored;
  for (const auto& [name, tensor] : ckpt.params) {
    if (!stored.emplace(name, &tensor).second) {
      throw FormatError("checkpoint: parameter '" + name + "' appears twice");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = stored.find(params.name(i));
    if (it == stored.end()) {
      throw FormatError("checkpoint: missing parameter '" + params.name(i) + "'");
    }
    if (it->second->shape() != params.tensor(i).shape()) {
      throw FormatError("checkpoint: parameter '" + params.name(i) + "' has shape " +
                        shape_string(it->second->shape()) + " but the config implies " +
                        shape_string(params.tensor(i).shape()));
    }
    auto src = it->second->values();
    std::copy(src.begin(), src.end(), params.tensor(i).values().begin());
  }
  if (stored.size() != params.size()) {
    throw FormatError("checkpoint: holds " + std::to_string(stored.size()) +
                      " parameters but the config implies " + std::to_string(params.size()));
  }
}

}  // namespace

Checkpoint make_checkpoint(const DialogModel& model, const Vocabulary& vocab,
                           const AdamState* adam, std::uint64_t seed, std::uint64_t step) {
  if (vocab.size() != model.config().vocab_size) {
    throw ArgumentError("checkpoint: vocabulary size does not match the model config");
  }
  Checkpoint c;
  c.kind = kDialogModelKind;
  c.config = model.config().to_json();
  c.vocab = vocab;
  c.params = collect(model.parameters());
  if (adam != nullptr && adam->step > 0) c.adam = *adam;
  c.seed = seed;
  c.step = step;
  return c;
}

Checkpoint make_checkpoint(const AttributeClassifier& model, const Vocabulary& vocab,
                           std::uint64_t seed) {
  Checkpoint c;
  c.kind = kClassifierKind;
  c.config = model.config().to_json();
  c.vocab = vocab;
  c.params = collect(model.parameters());
  c.seed = seed;
  return c;
}

DialogModel model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != kDialogModelKind) {
    throw FormatError("checkpoint kind is '" + ckpt.kind + "', expected '" + kDialogModelKind + "'");
  }
  ModelConfig config = ModelConfig::from_json(ckpt.config);
  if (config.vocab_size != ckpt.vocab.size()) {
    throw FormatError("checkpoint: config vocab_size " + std::to_string(config.vocab_size) +
                      " differs from the stored vocabulary size " +
                      std::to_string(ckpt.vocab.size()));
  }
  DialogModel model(std::move(config));
  copy_into(ckpt, model.parameters());
  return model;
}

AttributeClassifier classifier_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != kClassifierKind) {
    throw FormatError("checkpoint kind is '" + ckpt.kind + "', expected '" + kClassifierKind + "'");
  }
  AttributeClassifier model(ClassifierConfig::from_json(ckpt.config));
  copy_into(ckpt, model.parameters());
  return model;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string payload;
  nlohmann::json params = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : ckpt.params) {
    params.push_back({{"name", name}, {"offset", offset}, {"shape", tensor.shape()}});
    put_doubles(payload, tensor.values());
    offset += tensor.size();
  }
  nlohmann::json adam = nullptr;
  if (ckpt.adam) {
    const AdamState& a = *ckpt.adam;
    if (a.first_moment.size() != ckpt.params.size() ||
        a.second_moment.size() != ckpt.params.size()) {
      throw ArgumentError("checkpoint: Adam state does not cover every parameter");
    }
    adam = {{"step", a.step},
            {"learning_rate", a.config.learning_rate},
            {"beta1", a.config.beta1},
            {"beta2", a.config.beta2},
            {"epsilon", a.config.epsilon},
            {"offset", offset}};
    for (const auto* moments : {&a.first_moment, &a.second_moment}) {
      for (std::size_t i = 0; i < moments->size(); ++i) {
        if ((*moments)[i].size() != ckpt.params[i].second.size()) {
          throw ArgumentError("checkpoint: Adam moment size mismatch for " + ckpt.params[i].first);
        }
        put_doubles(payload, (*moments)[i]);
        offset += (*moments)[i].size();
      }
    }
  }
  nlohmann::json header = {{"format_version", kCheckpointFormatVersion},
                           {"kind", ckpt.kind},
                           {"config", ckpt.config},
                           {"vocab", ckpt.vocab.tokens()},
                           {"params", params},
                           {"adam", adam},
                           {"seed", ckpt.seed},
                           {"step", ckpt.step},
                           {"metadata", ckpt.metadata},
                           {"payload_doubles", offset}};
  const std::string text = header.dump();
  std::string out;
  out.reserve(8 + text.size() + payload.size());
  put_u64(out, text.size());
  out += text;
  out += payload;
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8) throw FormatError("checkpoint truncated: missing header length");
  const std::uint64_t header_len = get_u64(bytes, 0);
  if (header_len > bytes.size() - 8) throw FormatError("checkpoint truncated: incomplete header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  try {
    const auto version = header.at("format_version").get<std::uint64_t>();
    if (version != kCheckpointFormatVersion) {
      throw FormatError("checkpoint format version " + std::to_string(version) +
                        " is not supported (expected " +
                        std::to_string(kCheckpointFormatVersion) + ")");
    }
    const std::size_t base = 8 + header_len;
    const auto total = header.at("payload_doubles").get<std::uint64_t>();
    if (bytes.size() - base != total * 8) {
      throw FormatError("checkpoint payload has " + std::to_string(bytes.size() - base) +
                        " bytes, header declares " + std::to_string(total * 8));
    }
    auto read = [&](std::uint64_t at, std::size_t count) {
      if (at + count > total) throw FormatError("checkpoint: entry exceeds the payload");
      std::vector<double> v(count);
      for (std::size_t i = 0; i < count; ++i) {
        v[i] = std::bit_cast<double>(get_u64(bytes, base + 8 * (at + i)));
      }
      return v;
    };
    Checkpoint c;
    c.kind = header.at("kind").get<std::string>();
    c.config = header.at("config");
    c.vocab = Vocabulary::from_tokens(header.at("vocab").get<std::vector<std::string>>());
    for (const auto& p : header.at("params")) {
      Shape shape = p.at("shape").get<Shape>();
      c.params.emplace_back(p.at("name").get<std::string>(),
                            Tensor(shape, read(p.at("offset").get<std::uint64_t>(), shape_size(shape))));
    }
    if (!header.at("adam").is_null()) {
      const auto& a = header["adam"];
      AdamState s;
      s.step = a.at("step").get<std::uint64_t>();
      s.config.learning_rate = a.at("learning_rate").get<double>();
      s.config.beta1 = a.at("beta1").get<double>();
      s.config.beta2 = a.at("beta2").get<double>();
      s.config.epsilon = a.at("epsilon").get<double>();
      std::uint64_t at = a.at("offset").get<std::uint64_t>();
      for (auto* moments : {&s.first_moment, &s.second_moment}) {
        for (const auto& [name, tensor] : c.params) {
          moments->push_back(read(at, tensor.size()));
          at += tensor.size();
        }
      }
      c.adam = std::move(s);
    }
    c.seed = header.at("seed").get<std::uint64_t>();
    c.step = header.at("step").get<std::uint64_t>();
    c.metadata = header.at("metadata");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is malformed: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace attrdialog
