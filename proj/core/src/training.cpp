// SPDX-License-Identifier: Apache-2.0
#include "attrdialog/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "attrdialog/error.hpp"
#include "attrdialog/evaluation.hpp"

namespace attrdialog {

namespace {

struct ExampleRef {
  std::size_t dialog;
  std::size_t target;
};

TokenMatrix pad_rows(const std::vector<const std::vector<int>*>& rows) {
  TokenMatrix m;
  m.rows = rows.size();
  for (const auto* r : rows) m.cols = std::max(m.cols, r == nullptr ? 0 : r->size());
  m.cols = std::max<std::size_t>(m.cols, 1);
  m.data.assign(m.rows * m.cols, Vocabulary::kPad);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] == nullptr) continue;
    std::copy(rows[i]->begin(), rows[i]->end(), m.data.begin() + static_cast<std::ptrdiff_t>(i * m.cols));
  }
  return m;
}

}  // namespace

std::vector<Utterance> Batch::context(std::size_t b) const {
  std::vector<Utterance> out;
  for (std::size_t j = 0; j < window; ++j) {
    const std::size_t len = context_lengths[j][b];
    if (len == 0) continue;
    auto row = context_tokens[j].row(b);
    out.push_back(Utterance{std::vector<int>(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(len)),
                            context_attributes[j][b]});
  }
  return out;
}

Utterance Batch::target(std::size_t b) const {
  auto row = target_tokens.row(b);
  return Utterance{
      std::vector<int>(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(target_lengths[b])),
      target_attributes[b]};
}

std::vector<Batch> make_batches(std::span<const Dialog> dialogs, const AttributeSchema& schema,
                                std::size_t batch_size, std::size_t context_window, Rng& rng) {
  if (batch_size == 0) throw ArgumentError("make_batches: batch_size must be at least 1");
  if (context_window == 0) throw ArgumentError("make_batches: context_window must be at least 1");
  std::vector<ExampleRef> examples;
  for (std::size_t d = 0; d < dialogs.size(); ++d) {
    for (std::size_t m = 1; m < dialogs[d].size(); ++m) examples.push_back({d, m});
  }
  if (examples.empty()) throw ArgumentError("make_batches: corpus has no (context, target) pairs");
  std::shuffle(examples.begin(), examples.end(), rng);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t stop = std::min(examples.size(), start + batch_size);
    const std::size_t n = stop - start;
    Batch batch;
    batch.window = context_window;
    batch.context_lengths.assign(context_window, std::vector<std::size_t>(n, 0));
    batch.context_attributes.assign(
        context_window, std::vector<std::vector<int>>(n, schema.unknown_assignment()));
    batch.context_counts.assign(n, 0);
    std::vector<std::vector<const std::vector<int>*>> slot_rows(
        context_window, std::vector<const std::vector<int>*>(n, nullptr));
    std::vector<const std::vector<int>*> target_rows;
    for (std::size_t b = 0; b < n; ++b) {
      const auto& ref = examples[start + b];
      const Dialog& d = dialogs[ref.dialog];
      const std::size_t begin = ref.target > context_window ? ref.target - context_window : 0;
      const std::size_t count = ref.target - begin;
      batch.context_counts[b] = count;
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t slot = context_window - count + i;
        const Utterance& u = d.utterances[begin + i];
        schema.validate(u.attributes);
        slot_rows[slot][b] = &u.tokens;
        batch.context_lengths[slot][b] = u.tokens.size();
        batch.context_attributes[slot][b] = u.attributes;
      }
      const Utterance& target = d.utterances[ref.target];
      schema.validate(target.attributes);
      target_rows.push_back(&target.tokens);
      batch.target_lengths.push_back(target.tokens.size());
      batch.target_attributes.push_back(target.attributes);
      std::vector<std::uint8_t> known;
      for (std::size_t k = 0; k < schema.size(); ++k) {
        known.push_back(target.attributes[k] == schema.family(k).unknown() ? 0 : 1);
      }
      batch.attribute_mask.push_back(std::move(known));
    }
    for (std::size_t j = 0; j < context_window; ++j) {
      batch.context_tokens.push_back(pad_rows(slot_rows[j]));
    }
    batch.target_tokens = pad_rows(target_rows);
    batch.target_mask.assign(batch.target_tokens.data.size(), 0);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < batch.target_lengths[b]; ++i) {
        batch.target_mask[b * batch.target_tokens.cols + i] = 1;
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

JointBatchLoss batch_loss(ad::Graph& g, const DialogModel& model, const Batch& batch,
                          bool training, Rng* rng) {
  if (batch.size() == 0) throw ArgumentError("batch_loss: empty batch");
  JointBatchLoss out;
  std::vector<ad::Expr> terms;
  terms.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::vector<Utterance> context = batch.context(b);
    const Utterance target = batch.target(b);
    ContextState ctx = model.encode_context(g, context, training, rng);
    AttributeLoss attr = model.attribute_nll(g, ctx, target.attributes);
    ConditioningVector c = model.build_conditioning(g, ctx, target.attributes);
    DecodeResult dec = model.decode_utterance_nll(g, c, target.tokens, training, rng);
    terms.push_back(ad::add(attr.loss, dec.loss));
    out.attribute_nll += attr.loss.value()[0];
    out.token_nll += dec.total_nll();
    out.tokens += dec.tokens;
  }
  ad::Expr total = terms.size() == 1 ? terms[0] : ad::sum(ad::concat(terms, 1));
  out.loss = ad::scale(total, 1.0 / static_cast<double>(batch.size()));
  return out;
}

nlohmann::json TrainHyper::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"clip_norm", clip_norm},
          {"patience", patience},
          {"validation_fraction", validation_fraction},
          {"seed", seed}};
}

TrainHyper TrainHyper::from_json(const nlohmann::json& j) {
  TrainHyper h;
  h.epochs = j.value("epochs", h.epochs);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.clip_norm = j.value("clip_norm", h.clip_norm);
  h.patience = j.value("patience", h.patience);
  h.validation_fraction = j.value("validation_fraction", h.validation_fraction);
  h.seed = j.value("seed", h.seed);
  return h;
}

nlohmann::json EpochLog::to_json() const {
  return {{"epoch", epoch}, {"train_nll", train_nll}, {"valid_ppl", valid_ppl}};
}

TrainResult train_mle(std::span<const Dialog> train, std::span<const Dialog> valid,
                      ModelConfig config, const TrainHyper& hyper,
                      const EpochCallback& on_epoch) {
  if (train.empty()) throw ArgumentError("train_mle: empty training split");
  if (valid.empty()) throw ArgumentError("train_mle: empty validation split");
  TrainResult result{DialogModel(std::move(config)), AdamState{}, 0, 0, 0.0, {}, {}};
  DialogModel& model = result.model;
  ParameterSet& params = model.parameters();
  result.adam.config.learning_rate = hyper.learning_rate;
  Rng rng(hyper.seed);

  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params = params.snapshot();
  AdamState best_adam = result.adam;
  std::uint64_t best_step = 0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
    auto batches = make_batches(train, model.schema(), hyper.batch_size,
                                model.config().context_window, rng);
    double epoch_loss = 0.0;
    for (const Batch& batch : batches) {
      try {
        ad::Graph g;
        JointBatchLoss loss = batch_loss(g, model, batch, true, &rng);
        params.zero_grad();
        g.backward(loss.loss);
        if (hyper.clip_norm > 0.0) params.clip_grad_norm(hyper.clip_norm);
        adam_step(params, result.adam);
        const double value = loss.loss.value()[0];
        epoch_loss += value;
        result.batch_losses.push_back(value);
        ++result.step;
      } catch (const NumericError& e) {
        throw NumericError("training diverged at step " + std::to_string(result.step + 1) +
                           " (epoch " + std::to_string(epoch) + "): " + e.what());
      }
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_nll = epoch_loss / static_cast<double>(batches.size());
    entry.valid_ppl = perplexity(model, valid);
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (entry.valid_ppl < best) {
      best = entry.valid_ppl;
      best_params = params.snapshot();
      best_adam = result.adam;
      best_step = result.step;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= hyper.patience) {
      break;
    }
  }
  params.restore(best_params);
  params.zero_grad();
  for (std::size_t i = 0; i < params.size(); ++i) params.tensor(i).drop_grad();
  result.adam = std::move(best_adam);
  result.step = best_step;
  result.best_valid_ppl = best;
  return result;
}

TrainResult train_mle(const std::vector<Dialog>& corpus, ModelConfig config,
                      const TrainHyper& hyper, const EpochCallback& on_epoch) {
  auto [train, valid] = split_dialogs(corpus, hyper.validation_fraction);
  if (valid.empty()) valid = train;
  return train_mle(train, valid, std::move(config), hyper, on_epoch);
}

}  // namespace attrdialog
