#include "pmlm/model/checkpoint.h"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pmlm {

using nlohmann::json;

json config_to_json(const TransformerConfig& c) {
  return json{{"vocab_size", c.vocab_size},
              {"max_len", c.max_len},
              {"layers", c.layers},
              {"heads", c.heads},
              {"hidden_size", c.hidden_size},
              {"intermediate_size", c.intermediate_size},
              {"dropout_rate", c.dropout_rate},
              {"attention_mode", to_string(c.attention_mode)},
              {"positional_kind", to_string(c.positional_kind)},
              {"relative_window", c.relative_window}};
}

TransformerConfig config_from_json(const json& j) {
  TransformerConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_len = j.value("max_len", c.max_len);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.hidden_size = j.value("hidden_size", c.hidden_size);
  c.intermediate_size = j.value("intermediate_size", c.intermediate_size);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.attention_mode = parse_attention_mode(j.value("attention_mode", to_string(c.attention_mode)));
  c.positional_kind = parse_positional_kind(j.value("positional_kind", to_string(c.positional_kind)));
  c.relative_window = j.value("relative_window", c.relative_window);
  return c;
}

namespace {

void append_le(std::string& out, double value) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(value);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string serialize_checkpoint(const Transformer& model, const json& metadata) {
  json tensors = json::object();
  std::size_t offset = 0;
  for (const auto& [name, t] : model.params()) {
    tensors[name] = {{"shape", t.shape()}, {"dtype", "f64"}, {"byte_offset", offset}};
    offset += t.numel() * sizeof(double);
  }
  json header{{"config", config_to_json(model.config())}, {"tensors", tensors}};
  if (!metadata.is_null()) header["metadata"] = metadata;

  std::string out = header.dump();
  out.push_back('\0');
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : model.params()) {
    for (double v : t.data()) append_le(out, v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const auto sep = bytes.find('\0');
  if (sep == std::string::npos) throw std::runtime_error("checkpoint: missing header separator");
  json header;
  try {
    header = json::parse(bytes.substr(0, sep));
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: malformed header: ") + e.what());
  }
  const TransformerConfig config = config_from_json(header.at("config"));
  const std::size_t payload = sep + 1;
  const std::size_t payload_size = bytes.size() - payload;

  ParameterMap params;
  for (const auto& [name, entry] : header.at("tensors").items()) {
    if (entry.at("dtype") != "f64") {
      throw std::runtime_error("checkpoint: tensor " + name + " has unsupported dtype");
    }
    Shape shape = entry.at("shape").get<Shape>();
    const std::size_t offset = entry.at("byte_offset").get<std::size_t>();
    const std::size_t count = shape_numel(shape);
    if (offset + count * sizeof(double) > payload_size) {
      throw std::runtime_error("checkpoint: tensor " + name + " runs past the end of the payload");
    }
    std::vector<double> values(count);
    const char* src = bytes.data() + payload + offset;
    for (std::size_t i = 0; i < count; ++i) values[i] = read_le(src + i * sizeof(double));
    params.emplace(name, Tensor::from(std::move(shape), std::move(values)));
  }
  json metadata = header.contains("metadata") ? header["metadata"] : json();
  return Checkpoint{Transformer(config, std::move(params)), std::move(metadata)};
}

void save_checkpoint(const std::filesystem::path& path, const Transformer& model,
                     const json& metadata) {
  const std::string bytes = serialize_checkpoint(model, metadata);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_checkpoint(buffer.str());
}

}  // namespace pmlm
