#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "pmlm/model/transformer.h"

namespace pmlm {

nlohmann::json config_to_json(const TransformerConfig& config);
TransformerConfig config_from_json(const nlohmann::json& j);

struct Checkpoint {
  Transformer model;
  nlohmann::json metadata;  // free-form (vocabulary, tokenizer, preset), may be null
};

// Layout: UTF-8 JSON header {"config", "tensors": {name: {shape, dtype:"f64",
// byte_offset}}, "metadata"} followed by a single '\0' and the concatenated
// little-endian IEEE-754 doubles of every tensor in name order.
std::string serialize_checkpoint(const Transformer& model, const nlohmann::json& metadata = {});
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Transformer& model,
                     const nlohmann::json& metadata = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pmlm
