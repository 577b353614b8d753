#include "pmlm/app/train.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pmlm/core/ops.h"
#include "pmlm/core/optimizer.h"
#include "pmlm/model/checkpoint.h"
#include "pmlm/objectives/objectives.h"

namespace pmlm {

using nlohmann::json;

json checkpoint_metadata(const RunConfig& config, const Vocabulary& vocabulary) {
  return json{{"vocabulary", vocabulary.to_json()}, {"run_config", to_json(config)}};
}

std::string loss_log_jsonl(const std::vector<LossRecord>& log) {
  std::string out;
  for (const auto& r : log) {
    out += json{{"step", r.step}, {"loss", r.loss}}.dump();
    out.push_back('\n');
  }
  return out;
}

namespace {

double scheduled_rate(const TrainingOptions& t, std::size_t step) {
  const double base = t.learning_rate;
  if (t.warmup_steps > 0 && step <= t.warmup_steps) {
    return base * static_cast<double>(step) / static_cast<double>(t.warmup_steps);
  }
  const double span = static_cast<double>(std::max<std::size_t>(1, t.steps - std::min(t.steps, t.warmup_steps)));
  const double progress = static_cast<double>(step - std::min(step, t.warmup_steps)) / span;
  return base * (1.0 - 0.9 * std::min(1.0, progress));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

}  // namespace

TrainResult train(const RunConfig& config_in, const Corpus& corpus) {
  RunConfig config = config_in;
  config.model.vocab_size = corpus.vocabulary.size();
  config.validate();
  const TrainingOptions& opts = config.training;
  const std::uint64_t seed = *opts.seed;
  const bool causal = config.model.attention_mode == AttentionMode::kCausal;

  TrainResult result{Transformer::random(config.model, seed, opts.init_std), corpus.vocabulary, {}};
  Transformer& model = result.model;
  model.set_requires_grad(true);
  const json metadata = checkpoint_metadata(config, corpus.vocabulary);

  Adam adam(AdamOptions{opts.learning_rate, 0.9, 0.999, 1e-8, opts.weight_decay});
  Rng rng = Rng::split(seed, 1);
  const ForwardOptions forward{true, &rng};

  for (std::size_t step = 1; step <= opts.steps; ++step) {
    std::vector<Tensor> losses;
    for (std::size_t b = 0; b < opts.batch_size; ++b) {
      const TokenSequence& seq = corpus.documents[rng.index(corpus.documents.size())];
      if (content_length(seq) == 0) continue;
      if (causal) {
        losses.push_back(ar_loss_graph(model, seq, forward));
      } else {
        MaskedSample sample = sample_pmlm_loss(model, seq, *config.prior, rng,
                                               opts.zero_mask_policy, forward);
        if (sample.loss) losses.push_back(std::move(*sample.loss));
      }
    }
    if (losses.empty()) {
      result.loss_log.push_back({step, 0.0});
      continue;
    }
    // Sequences without a masked position count as zero loss.
    const Tensor loss = ops::scale(ops::mean_of(losses), static_cast<double>(losses.size()) /
                                                             static_cast<double>(opts.batch_size));
    const double value = loss.item();
    if (!std::isfinite(value)) {
      if (!config.checkpoint.empty()) save_checkpoint(config.checkpoint, model, metadata);
      if (!config.loss_log.empty()) write_text(config.loss_log, loss_log_jsonl(result.loss_log));
      throw TrainingAborted("training: non-finite loss at step " + std::to_string(step) +
                                "; last good parameters kept",
                            step);
    }
    Adam::zero_grad(model.params());
    loss.backward();
    adam.options().learning_rate = scheduled_rate(opts, step);
    try {
      adam.step(model.params());
    } catch (const NonFiniteGradient& e) {
      // The optimizer rejected the whole update, so the parameters are still the last good ones.
      if (!config.checkpoint.empty()) save_checkpoint(config.checkpoint, model, metadata);
      if (!config.loss_log.empty()) write_text(config.loss_log, loss_log_jsonl(result.loss_log));
      throw TrainingAborted("training: " + std::string(e.what()) + " at step " + std::to_string(step),
                            step);
    }
    result.loss_log.push_back({step, value});

    if (opts.checkpoint_every > 0 && step % opts.checkpoint_every == 0 && !config.checkpoint.empty()) {
      save_checkpoint(config.checkpoint, model, metadata);
    }
  }

  model.set_requires_grad(false);
  for (auto& [name, t] : model.params()) t.node()->grad.clear();
  if (!config.checkpoint.empty()) save_checkpoint(config.checkpoint, model, metadata);
  if (!config.loss_log.empty()) write_text(config.loss_log, loss_log_jsonl(result.loss_log));
  return result;
}

TrainResult train(const RunConfig& config) {
  config.validate();
  if (config.train_corpus.empty()) throw std::invalid_argument("run config: corpus.train is required");
  const Corpus corpus = ingest(config.train_corpus, config.tokenizer, config.model.max_len);
  return train(config, corpus);
}

}  // namespace pmlm
