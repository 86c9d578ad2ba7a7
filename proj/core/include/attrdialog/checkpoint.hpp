// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "attrdialog/adam.hpp"
#include "attrdialog/dialog_model.hpp"
#include "attrdialog/tagger.hpp"
#include "attrdialog/tensor.hpp"
#include "attrdialog/vocabulary.hpp"

namespace attrdialog {

inline constexpr std::uint64_t kCheckpointFormatVersion = 1;
inline constexpr const char* kDialogModelKind = "dialog-model";
inline constexpr const char* kClassifierKind = "classifier";

/// On disk: 8-byte little-endian header length, the JSON header, then the
/// payload of little-endian doubles (row-major parameters, followed by the
/// Adam moments when present).
struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  Vocabulary vocab;
  std::vector<std::pair<std::string, Tensor>> params;
  std::optional<AdamState> adam;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  /// Free-form provenance, e.g. the effective command configuration.
  nlohmann::json metadata = nlohmann::json::object();
};

Checkpoint make_checkpoint(const DialogModel& model, const Vocabulary& vocab,
                           const AdamState* adam = nullptr, std::uint64_t seed = 0,
                           std::uint64_t step = 0);
Checkpoint make_checkpoint(const AttributeClassifier& model, const Vocabulary& vocab,
                           std::uint64_t seed = 0);

/// Rebuilds the model and copies every parameter. Rejects a missing,
/// surplus, or differently shaped parameter.
DialogModel model_from_checkpoint(const Checkpoint& ckpt);
AttributeClassifier classifier_from_checkpoint(const Checkpoint& ckpt);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace attrdialog
