#include <cmath>
#include <cstring>
#include <filesystem>
#include <stdexcept>

#include "doctest.h"
#include "pmlm/model/checkpoint.h"
#include "pmlm/objectives/objectives.h"
#include "support.h"

using namespace pmlm;
using namespace pmlm::testing;

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("config validation") {
  TransformerConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());
  c.heads = 3;
  CHECK_THROWS(c.validate());
  c = tiny_config();
  c.vocab_size = 3;
  CHECK_THROWS(c.validate());
  c = tiny_config(AttentionMode::kBidirectional, PositionalKind::kRelative);
  c.relative_window = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("positional variants differ only in positional tables") {
  auto abs_layout = parameter_layout(tiny_config(AttentionMode::kBidirectional, PositionalKind::kAbsolute));
  auto rel_layout = parameter_layout(tiny_config(AttentionMode::kBidirectional, PositionalKind::kRelative));
  std::map<std::string, Shape> a(abs_layout.begin(), abs_layout.end());
  std::map<std::string, Shape> r(rel_layout.begin(), rel_layout.end());
  for (const auto& [name, shape] : a) {
    if (name == "pos_emb") continue;
    REQUIRE(r.contains(name));
    CHECK(r[name] == shape);
  }
  for (const auto& [name, shape] : r) {
    if (name.find("rel_bias") != std::string::npos) continue;
    CHECK(a.contains(name));
  }
  Transformer ma = Transformer::random(tiny_config(), 1);
  Transformer mr = Transformer::random(tiny_config(AttentionMode::kBidirectional, PositionalKind::kRelative), 1);
  const TokenSequence seq = {3, 4, 5};
  CHECK(ma.forward(seq).shape() == mr.forward(seq).shape());
}

TEST_CASE("forward rejects bad ids and long sequences") {
  Transformer m = Transformer::random(tiny_config(), 1);
  CHECK_THROWS_AS(m.forward(TokenSequence{3, 12}), std::out_of_range);
  CHECK_THROWS_AS(m.forward(TokenSequence{3, -1}), std::out_of_range);
  CHECK_THROWS_AS(m.forward(TokenSequence(17, 3)), std::invalid_argument);
  try {
    m.forward(TokenSequence{3, 4, 99});
  } catch (const std::out_of_range& e) {
    const std::string msg = e.what();
    CHECK(msg.find("99") != std::string::npos);
    CHECK(msg.find("2") != std::string::npos);
  }
}

TEST_CASE("causal logits ignore later tokens exactly") {
  for (auto pos : {PositionalKind::kAbsolute, PositionalKind::kRelative}) {
    Transformer m = Transformer::random(tiny_config(AttentionMode::kCausal, pos), 3, 0.5);
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 2 + rng.index(10);
      TokenSequence a = random_tokens(n, 12, rng);
      TokenSequence b = a;
      const std::size_t cut = 1 + rng.index(n - 1);
      for (std::size_t i = cut; i < n; ++i) b[i] = random_tokens(1, 12, rng)[0];
      Tensor la = m.forward(a), lb = m.forward(b);
      for (std::size_t r = 0; r < cut; ++r) CHECK(row(la, r) == row(lb, r));
    }
  }
}

TEST_CASE("bidirectional logits at the first position react to the last token") {
  Transformer m = Transformer::random(tiny_config(), 3, 0.5);
  TokenSequence a = {3, 4, 5, 6, 7};
  TokenSequence b = a;
  b.back() = 9;
  CHECK(row(m.forward(a), 0) != row(m.forward(b), 0));
}

TEST_CASE("zeroed attention and feed-forward reduce to projected embeddings") {
  TransformerConfig c = tiny_config();
  c.layers = 1;
  c.heads = 1;
  Transformer m = Transformer::random(c, 5, 0.7);
  for (auto& [name, t] : m.params()) {
    if (name.find(".attn.") != std::string::npos || name.find(".ffn.") != std::string::npos) {
      for (auto& v : t.data()) v = 0.0;
    }
  }
  const TokenSequence seq = {4, 9, 3, 4};
  Tensor logits = m.forward(seq);
  const std::size_t h = c.hidden_size;
  const Tensor& emb = m.param("tok_emb");
  const Tensor& pos = m.param("pos_emb");
  const Tensor& g = m.param("ln_f.gamma");
  const Tensor& beta = m.param("ln_f.beta");
  const Tensor& w = m.param("head.w");
  const Tensor& b = m.param("head.b");
  for (std::size_t n = 0; n < seq.size(); ++n) {
    std::vector<double> x(h);
    double mean = 0.0;
    for (std::size_t i = 0; i < h; ++i) {
      x[i] = emb.at(seq[n], i) + pos.at(n, i);
      mean += x[i];
    }
    mean /= h;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= h;
    for (std::size_t i = 0; i < h; ++i) x[i] = (x[i] - mean) / std::sqrt(var + 1e-12) * g.data()[i] + beta.data()[i];
    for (std::size_t v = 0; v < c.vocab_size; ++v) {
      double expect = b.data()[v];
      for (std::size_t i = 0; i < h; ++i) expect += x[i] * w.at(i, v);
      CHECK(logits.at(n, v) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  // Position-local: the same token at the same position gives the same row regardless of context.
  Tensor other = m.forward(TokenSequence{4, 3, 3, 10});
  CHECK(row(other, 0) == row(logits, 0));
}

TEST_CASE("incremental decoding matches full causal forward") {
  for (auto pos : {PositionalKind::kAbsolute, PositionalKind::kRelative}) {
    Transformer m = Transformer::random(tiny_config(AttentionMode::kCausal, pos), 12, 0.5);
    Rng rng(12);
    const TokenSequence prefix = random_tokens(16, 12, rng);

    KvCache first;
    auto one = m.forward_incremental(std::span(prefix).first(1), first);
    CHECK(one == row(m.forward(std::span(prefix).first(1)), 0));

    KvCache eight;
    auto last = m.forward_incremental(std::span(prefix).first(8), eight);
    CHECK(max_abs_diff(last, row(m.forward(std::span(prefix).first(8)), 7)) < 1e-10);

    KvCache cache;
    double worst = 0.0;
    for (std::size_t t = 1; t <= 16; ++t) {
      auto inc = m.forward_incremental(std::span(prefix).first(t), cache);
      worst = std::max(worst, max_abs_diff(inc, row(m.forward(std::span(prefix).first(t)), t - 1)));
    }
    CHECK(worst < 1e-9);
    CHECK(cache.length == 16);
  }
}

TEST_CASE("incremental decoding is refused for bidirectional models") {
  Transformer m = Transformer::random(tiny_config(), 1);
  KvCache cache;
  CHECK_THROWS_AS(m.forward_incremental(TokenSequence{3, 4}, cache), std::logic_error);
}

TEST_CASE("relative bias depends only on clamped distance") {
  TransformerConfig c = tiny_config(AttentionMode::kBidirectional, PositionalKind::kRelative);
  c.relative_window = 2;
  Transformer m = Transformer::random(c, 2, 1.0);
  const std::size_t n = 5;
  for (std::size_t layer = 0; layer < c.layers; ++layer) {
    auto heads = m.relative_attention_bias(layer, n);
    REQUIRE(heads.size() == c.heads);
    const Tensor& table = m.param("layer" + std::to_string(layer) + ".rel_bias");
    for (std::size_t h = 0; h < c.heads; ++h) {
      const Tensor& bias = heads[h];
      for (std::size_t i = 0; i < n; ++i) CHECK(bias.at(i, i) == bias.at(0, 0));
      CHECK(bias.at(0, 4) == bias.at(0, 3));
      CHECK(bias.at(0, 4) == bias.at(0, 2));
      CHECK(bias.at(4, 0) == bias.at(3, 0));
      for (std::size_t i = 0; i + 1 < n; ++i) {
        for (std::size_t j = 0; j + 1 < n; ++j) CHECK(bias.at(i, j) == bias.at(i + 1, j + 1));
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const long d = std::clamp(static_cast<long>(j) - static_cast<long>(i), -2L, 2L);
          CHECK(bias.at(i, j) == table.at(h, static_cast<std::size_t>(d + 2)));
        }
      }
    }
  }
}

TEST_CASE("padding keys are invisible to real positions") {
  for (auto pos : {PositionalKind::kAbsolute, PositionalKind::kRelative}) {
    Transformer m = Transformer::random(tiny_config(AttentionMode::kBidirectional, pos), 4, 0.5);
    const TokenSequence seq = {5, 3, 8, 4};
    TokenSequence padded = seq;
    padded.resize(9, kPadId);
    Tensor a = m.forward(seq), b = m.forward(padded);
    for (std::size_t r = 0; r < seq.size(); ++r) CHECK(row(a, r) == row(b, r));
  }
}

TEST_CASE("eval-mode forward is deterministic even with dropout configured") {
  TransformerConfig c = tiny_config();
  c.dropout_rate = 0.3;
  Transformer m = Transformer::random(c, 4);
  const TokenSequence seq = {3, 4, 5, 6};
  CHECK(m.forward(seq).data()[0] == m.forward(seq).data()[0]);
  Rng r1(1), r2(1);
  ForwardOptions t1{true, &r1}, t2{true, &r2};
  auto a = m.forward(seq, t1), b = m.forward(seq, t2);
  CHECK(std::vector<double>(a.data().begin(), a.data().end()) ==
        std::vector<double>(b.data().begin(), b.data().end()));
}

TEST_CASE("full-model loss passes a finite-difference gradient check") {
  const TokenSequence seq = {3, 7, 4, 11, 5, 9, 6, 8};
  for (auto mode : {AttentionMode::kBidirectional, AttentionMode::kCausal}) {
    for (auto pos : {PositionalKind::kAbsolute, PositionalKind::kRelative}) {
      Transformer m = Transformer::random(tiny_config(mode, pos), 21, 0.3);
      std::vector<std::pair<std::string, Tensor>> leaves(m.params().begin(), m.params().end());
      const MaskPattern pattern = MaskPattern::from_indices(8, std::vector<std::size_t>{1, 4, 6});
      auto loss = [&] {
        return mode == AttentionMode::kCausal ? ar_loss_graph(m, seq) : mlm_loss_graph(m, seq, pattern);
      };
      auto res = grad_check(loss, leaves);
      INFO(to_string(mode), " ", to_string(pos), " worst ", res.worst);
      CHECK(res.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  for (auto pos : {PositionalKind::kAbsolute, PositionalKind::kRelative}) {
    Transformer m = Transformer::random(tiny_config(AttentionMode::kCausal, pos), 33);
    const nlohmann::json meta = {{"note", "x"}};
    const std::string bytes = serialize_checkpoint(m, meta);
    Checkpoint back = deserialize_checkpoint(bytes);
    CHECK(back.model.config() == m.config());
    CHECK(back.metadata == meta);
    for (const auto& [name, t] : m.params()) {
      const auto& u = back.model.param(name);
      CHECK(std::memcmp(t.data().data(), u.data().data(), t.numel() * sizeof(double)) == 0);
    }
    CHECK(serialize_checkpoint(back.model, back.metadata) == bytes);

    const auto path = std::filesystem::temp_directory_path() / "pmlm_ckpt_roundtrip.bin";
    save_checkpoint(path, m, meta);
    Checkpoint loaded = load_checkpoint(path);
    CHECK(serialize_checkpoint(loaded.model, loaded.metadata) == bytes);
    std::filesystem::remove(path);
  }
}

TEST_CASE("checkpoint header follows the documented layout") {
  Transformer m = Transformer::random(tiny_config(), 1);
  const std::string bytes = serialize_checkpoint(m);
  const auto sep = bytes.find('\0');
  REQUIRE(sep != std::string::npos);
  auto header = nlohmann::json::parse(bytes.substr(0, sep));
  CHECK(header.contains("config"));
  std::size_t total = 0;
  for (auto& [name, entry] : header["tensors"].items()) {
    CHECK(entry["dtype"] == "f64");
    std::size_t numel = 1;
    for (auto d : entry["shape"]) numel *= d.get<std::size_t>();
    total += numel;
  }
  CHECK(bytes.size() - sep - 1 == total * sizeof(double));
}

TEST_CASE("corrupt checkpoints are rejected") {
  Transformer m = Transformer::random(tiny_config(), 1);
  std::string bytes = serialize_checkpoint(m);
  CHECK_THROWS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 8)));
  CHECK_THROWS(deserialize_checkpoint("not a checkpoint"));
  CHECK_THROWS(load_checkpoint("/nonexistent/dir/ckpt.bin"));
}
