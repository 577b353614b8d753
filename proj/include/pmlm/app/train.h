#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "pmlm/app/corpus.h"
#include "pmlm/app/run_config.h"
#include "pmlm/model/transformer.h"

namespace pmlm {

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainResult {
  Transformer model;
  Vocabulary vocabulary;
  std::vector<LossRecord> loss_log;
};

// Thrown when a step yields a non-finite loss; the last good parameters have
// been written to the configured checkpoint path.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::size_t step)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// Checkpoint metadata recorded alongside the weights.
nlohmann::json checkpoint_metadata(const RunConfig& config, const Vocabulary& vocabulary);

// Trains on an already ingested corpus. Writes the checkpoint and loss log
// when the config names paths for them.
TrainResult train(const RunConfig& config, const Corpus& corpus);

// Ingests config.train_corpus, then trains.
TrainResult train(const RunConfig& config);

std::string loss_log_jsonl(const std::vector<LossRecord>& log);

}  // namespace pmlm
