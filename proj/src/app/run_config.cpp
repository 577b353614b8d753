#include "pmlm/app/run_config.h"

#include <stdexcept>

#include "pmlm/model/checkpoint.h"

namespace pmlm {

using nlohmann::json;

std::string to_string(ZeroMaskPolicy policy) {
  return policy == ZeroMaskPolicy::kZeroLoss ? "zero_loss" : "resample_once";
}

ZeroMaskPolicy parse_zero_mask_policy(const std::string& text) {
  if (text == "zero_loss") return ZeroMaskPolicy::kZeroLoss;
  if (text == "resample_once") return ZeroMaskPolicy::kResampleOnce;
  throw std::invalid_argument("unknown zero_mask_policy '" + text + "' (expected resample_once or zero_loss)");
}

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("run config: " + what); };
  model.validate();
  if (!training.seed) fail("training.seed is required");
  if (model.attention_mode == AttentionMode::kCausal && prior) {
    fail("a masking prior only applies to bidirectional (masked) training; causal models train "
         "left to right");
  }
  if (model.attention_mode == AttentionMode::kBidirectional && !prior) {
    fail("bidirectional training needs a masking prior");
  }
  if (training.steps == 0) fail("training.steps must be positive");
  if (training.batch_size == 0) fail("training.batch_size must be positive");
  if (!(training.learning_rate > 0.0)) fail("training.learning_rate must be positive");
  if (!(training.init_std > 0.0)) fail("training.init_std must be positive");
  if (training.weight_decay < 0.0) fail("training.weight_decay must be non-negative");
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  c.training.seed = 1;
  if (name == "upmlm") {
    c.prior = MaskingPrior::uniform();
  } else if (name == "bert-like") {
    c.prior = MaskingPrior::point_mass(0.15);
  } else if (name == "gpt-like") {
    c.model.attention_mode = AttentionMode::kCausal;
  } else {
    throw std::invalid_argument("unknown preset '" + name + "' (expected upmlm, bert-like or gpt-like)");
  }
  return c;
}

json prior_to_json(const MaskingPrior& prior) {
  switch (prior.kind()) {
    case PriorKind::kUniform: return json{{"kind", "uniform"}};
    case PriorKind::kPointMass: return json{{"kind", "point_mass"}, {"r0", prior.r0()}};
    case PriorKind::kTruncatedUniform:
      return json{{"kind", "truncated_uniform"}, {"a", prior.lower()}, {"b", prior.upper()}};
  }
  return {};
}

MaskingPrior prior_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "uniform") return MaskingPrior::uniform();
  if (kind == "point_mass") return MaskingPrior::point_mass(j.at("r0").get<double>());
  if (kind == "truncated_uniform") {
    return MaskingPrior::truncated_uniform(j.at("a").get<double>(), j.at("b").get<double>());
  }
  throw std::invalid_argument("unknown prior kind '" + kind +
                              "' (expected uniform, point_mass or truncated_uniform)");
}

json to_json(const RunConfig& c) {
  json training{{"steps", c.training.steps},
                {"batch_size", c.training.batch_size},
                {"learning_rate", c.training.learning_rate},
                {"warmup_steps", c.training.warmup_steps},
                {"weight_decay", c.training.weight_decay},
                {"init_std", c.training.init_std},
                {"zero_mask_policy", to_string(c.training.zero_mask_policy)},
                {"checkpoint_every", c.training.checkpoint_every}};
  if (c.training.seed) training["seed"] = *c.training.seed;
  return json{{"preset", c.preset},
              {"model", config_to_json(c.model)},
              {"prior", c.prior ? prior_to_json(*c.prior) : json()},
              {"training", training},
              {"tokenizer", to_string(c.tokenizer)},
              {"corpus", {{"train", c.train_corpus}, {"test", c.test_corpus}}},
              {"checkpoint", c.checkpoint},
              {"loss_log", c.loss_log}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c = j.contains("preset") && !j["preset"].get<std::string>().empty()
                    ? preset_config(j["preset"].get<std::string>())
                    : RunConfig{};
  c.training.seed.reset();
  if (j.contains("model")) {
    json merged = config_to_json(c.model);
    merged.update(j["model"]);
    c.model = config_from_json(merged);
  }
  if (j.contains("prior")) {
    if (j["prior"].is_null()) {
      c.prior.reset();
    } else {
      c.prior = prior_from_json(j["prior"]);
    }
  }
  if (j.contains("training")) {
    const json& t = j["training"];
    c.training.steps = t.value("steps", c.training.steps);
    c.training.batch_size = t.value("batch_size", c.training.batch_size);
    c.training.learning_rate = t.value("learning_rate", c.training.learning_rate);
    c.training.warmup_steps = t.value("warmup_steps", c.training.warmup_steps);
    c.training.weight_decay = t.value("weight_decay", c.training.weight_decay);
    c.training.init_std = t.value("init_std", c.training.init_std);
    c.training.checkpoint_every = t.value("checkpoint_every", c.training.checkpoint_every);
    if (t.contains("zero_mask_policy")) {
      c.training.zero_mask_policy = parse_zero_mask_policy(t["zero_mask_policy"].get<std::string>());
    }
    if (t.contains("seed") && !t["seed"].is_null()) c.training.seed = t["seed"].get<std::uint64_t>();
  }
  if (j.contains("tokenizer")) c.tokenizer = parse_tokenizer_kind(j["tokenizer"].get<std::string>());
  if (j.contains("corpus")) {
    c.train_corpus = j["corpus"].value("train", c.train_corpus);
    c.test_corpus = j["corpus"].value("test", c.test_corpus);
  }
  c.checkpoint = j.value("checkpoint", c.checkpoint);
  c.loss_log = j.value("loss_log", c.loss_log);
  c.validate();
  return c;
}

}  // namespace pmlm
