#include "pmlm/evaluation/evaluation.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "pmlm/core/ops.h"
#include "pmlm/objectives/objectives.h"

namespace pmlm {

using nlohmann::json;

std::string to_string(PplMode mode) { return mode == PplMode::kRandom ? "random" : "sequential"; }

PplMode parse_ppl_mode(const std::string& text) {
  if (text == "sequential") return PplMode::kSequential;
  if (text == "random") return PplMode::kRandom;
  throw std::invalid_argument("unknown perplexity mode '" + text + "' (expected sequential or random)");
}

namespace {

void finish(PplReport& report) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : report.per_sequence) {
    nll += s.nll_sum;
    tokens += s.token_count;
  }
  if (tokens == 0) throw std::invalid_argument("perplexity: corpus has no scorable tokens");
  report.token_count = tokens;
  report.mean_nll = nll / static_cast<double>(tokens);
  report.ppl = std::exp(report.mean_nll);
}

}  // namespace

PplReport ppl_bidirectional(const Transformer& model, std::span<const TokenSequence> corpus,
                            PplMode mode, std::uint64_t seed) {
  if (model.config().attention_mode != AttentionMode::kBidirectional) {
    throw std::invalid_argument("ppl_bidirectional: model is causal; use ppl_causal");
  }
  if (corpus.empty()) throw std::invalid_argument("perplexity: empty corpus");
  NoGradGuard no_grad;
  PplReport report;
  report.model_kind = "bidirectional";
  report.mode = mode;
  report.seed = seed;
  const std::size_t vocab = model.config().vocab_size;

  for (std::size_t index = 0; index < corpus.size(); ++index) {
    const TokenSequence& seq = corpus[index];
    const std::size_t n = content_length(seq);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (mode == PplMode::kRandom) {
      Rng rng = Rng::split(seed, index);
      rng.shuffle(std::span<std::size_t>(order));
    }
    TokenSequence input(n, kMaskId);
    SequencePpl entry{index, 0.0, n, 1.0};
    for (std::size_t pos : order) {
      const Tensor logits = model.forward(std::span(input).first(n));
      const auto log_probs = ops::log_softmax(logits.data().subspan(pos * vocab, vocab));
      entry.nll_sum -= log_probs[static_cast<std::size_t>(seq[pos])];
      input[pos] = seq[pos];
    }
    if (n > 0) entry.ppl = std::exp(entry.nll_sum / static_cast<double>(n));
    report.per_sequence.push_back(entry);
  }
  finish(report);
  return report;
}

PplReport ppl_causal(const Transformer& model, std::span<const TokenSequence> corpus, PplMode mode) {
  if (model.config().attention_mode != AttentionMode::kCausal) {
    throw std::invalid_argument("ppl_causal: model is bidirectional; use ppl_bidirectional");
  }
  if (mode == PplMode::kRandom) {
    throw UnsupportedMode(
        "random-order perplexity is not defined for a causal (left-to-right) model; only "
        "sequential mode is supported");
  }
  if (corpus.empty()) throw std::invalid_argument("perplexity: empty corpus");
  PplReport report;
  report.model_kind = "causal";
  report.mode = mode;
  for (std::size_t index = 0; index < corpus.size(); ++index) {
    const std::size_t n = content_length(corpus[index]);
    SequencePpl entry{index, 0.0, n, 1.0};
    if (n > 0) {
      const LossValue loss = ar_loss(model, corpus[index]);
      entry.nll_sum = loss.value * static_cast<double>(n);
      entry.ppl = std::exp(loss.value);
    }
    report.per_sequence.push_back(entry);
  }
  finish(report);
  return report;
}

LatencyBenchmark bench_latency(const Transformer& causal, const Transformer& bidirectional,
                               std::size_t count, std::size_t length, const SamplerSpec& sampler,
                               std::uint64_t seed) {
  if (causal.config().attention_mode != AttentionMode::kCausal ||
      bidirectional.config().attention_mode != AttentionMode::kBidirectional) {
    throw std::invalid_argument("bench_latency: needs one causal and one bidirectional model");
  }
  if (count == 0 || length == 0) throw std::invalid_argument("bench_latency: count and length must be positive");
  using Clock = std::chrono::steady_clock;

  LatencyReport gpt{"causal (cached)", count, length, count * length, 0.0, 1.0};
  {
    Rng rng = Rng::split(seed, 0);
    const auto start = Clock::now();
    for (std::size_t i = 0; i < count; ++i) generate_causal(causal, {}, length, sampler, rng);
    gpt.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  }

  LatencyReport pmlm{"bidirectional (full recompute)", count, length, count * length, 0.0, 1.0};
  {
    Rng rng = Rng::split(seed, 1);
    GenerationConstraints constraints;
    constraints.length = length;
    const auto start = Clock::now();
    for (std::size_t i = 0; i < count; ++i) {
      generate(bidirectional, constraints, GenerationOrder::random(constraints, rng), sampler, rng);
    }
    pmlm.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  }
  pmlm.ratio_vs_baseline = gpt.wall_seconds > 0.0 ? pmlm.wall_seconds / gpt.wall_seconds : 0.0;

  LatencyBenchmark bench;
  bench.rows = {gpt, pmlm};
  std::ostringstream note;
  note << "Per generated token the bidirectional model reruns every layer over all " << length
       << " positions, since a newly placed token changes the hidden states of every other "
          "position; the causal model only computes the new position and reuses cached keys and "
          "values. Reference GPU measurement for 100 sequences of 128 tokens: 105.6 s causal vs "
          "126.8 s bidirectional, ratio "
       << std::fixed << std::setprecision(2) << 126.8 / 105.6 << " (context only).";
  bench.note = note.str();
  return bench;
}

json to_json(const PplReport& r) {
  json per = json::array();
  for (const auto& s : r.per_sequence) {
    per.push_back({{"index", s.index}, {"nll_sum", s.nll_sum}, {"token_count", s.token_count}, {"ppl", s.ppl}});
  }
  return json{{"model_kind", r.model_kind}, {"mode", to_string(r.mode)}, {"ppl", r.ppl},
              {"mean_nll", r.mean_nll},     {"token_count", r.token_count}, {"seed", r.seed},
              {"per_sequence", per}};
}

json to_json(const LatencyBenchmark& bench) {
  json rows = json::array();
  for (const auto& r : bench.rows) {
    rows.push_back({{"model_kind", r.model_kind},
                    {"sequence_count", r.sequence_count},
                    {"sequence_length", r.sequence_length},
                    {"forward_calls", r.forward_calls},
                    {"wall_seconds", r.wall_seconds},
                    {"ratio_vs_baseline", r.ratio_vs_baseline}});
  }
  return json{{"rows", rows}, {"note", bench.note}, {"reference_ratio", 126.8 / 105.6}};
}

namespace {

std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string fixed(double v, int digits) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

}  // namespace

std::string format_ppl_table(std::span<const PplRow> rows) {
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.model.size());
  std::ostringstream out;
  out << pad_right("Model", width) << " | PPL(sequential) | PPL(random)\n";
  out << std::string(width, '-') << "-+-----------------+------------\n";
  for (const auto& r : rows) {
    out << pad_right(r.model, width) << " | " << pad_right(fixed(r.sequential, 3), 15) << " | "
        << (r.random ? fixed(*r.random, 3) : std::string("N/A")) << '\n';
  }
  return out.str();
}

std::string format_latency_table(const LatencyBenchmark& bench) {
  std::size_t width = 6;
  for (const auto& r : bench.rows) width = std::max(width, r.model_kind.size());
  std::ostringstream out;
  out << pad_right("Models", width) << " | Cost Time\n";
  out << std::string(width, '-') << "-+----------\n";
  for (const auto& r : bench.rows) {
    out << pad_right(r.model_kind, width) << " | " << fixed(r.wall_seconds, 3) << " s\n";
  }
  if (bench.rows.size() == 2) {
    out << "ratio (bidirectional / causal): " << fixed(bench.rows[1].ratio_vs_baseline, 2) << '\n';
  }
  out << bench.note << '\n';
  return out.str();
}

}  // namespace pmlm
