#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pmlm/app/corpus.h"
#include "pmlm/app/run_config.h"
#include "pmlm/app/train.h"
#include "pmlm/evaluation/evaluation.h"
#include "pmlm/generation/generation.h"
#include "pmlm/model/checkpoint.h"
#include "pmlm/objectives/equivalence.h"

namespace {

using nlohmann::json;
using namespace pmlm;

// Exit codes: 0 success, 1 check failed, 2 usage or input error.
constexpr int kExitFailedCheck = 1;
constexpr int kExitError = 2;

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path);
  out << text;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void emit_json(const std::string& path, const json& j) {
  if (!path.empty()) write_file(path, j.dump(2) + "\n");
}

Vocabulary vocabulary_of(const Checkpoint& ckpt) {
  if (ckpt.metadata.is_object() && ckpt.metadata.contains("vocabulary")) {
    return Vocabulary::from_json(ckpt.metadata["vocabulary"]);
  }
  throw InputError("checkpoint carries no vocabulary");
}

// Lines of "<position>:<token>", positions 1-based. Blank lines are skipped.
std::map<std::size_t, TokenId> read_anchors(const std::string& path, const Vocabulary& vocab,
                                            std::size_t length) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read anchors file " + path);
  std::map<std::size_t, TokenId> anchors;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw InputError(path + ":" + std::to_string(line_no) + ": " + why + " in '" + line + "'");
    };
    const auto colon = line.find(':');
    if (colon == std::string::npos || colon == 0) fail("expected <position>:<token>");
    std::size_t position = 0;
    try {
      std::size_t used = 0;
      position = std::stoul(line.substr(0, colon), &used);
      if (used != colon) fail("position is not an integer");
    } catch (const std::logic_error&) {
      fail("position is not an integer");
    }
    if (position < 1 || position > length) {
      fail("position outside 1.." + std::to_string(length));
    }
    const std::string token = line.substr(colon + 1);
    if (token.empty()) fail("missing token");
    if (!vocab.contains(token) || is_special(vocab.id(token))) fail("token not in vocabulary");
    if (!anchors.emplace(position - 1, vocab.id(token)).second) fail("duplicate position");
  }
  return anchors;
}

std::vector<std::size_t> read_order(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::size_t> order;
  long long position = 0;
  while (in >> position) {
    if (position < 1) throw InputError(path + ": positions are 1-based");
    order.push_back(static_cast<std::size_t>(position - 1));
  }
  if (!in.eof()) throw InputError(path + ": expected whitespace-separated positions");
  return order;
}

struct SamplerArgs {
  std::string kind = "greedy";
  double temperature = 1.0;
  std::size_t top_k = 40;

  SamplerSpec spec() const {
    SamplerSpec s{parse_sampler_kind(kind), temperature, top_k};
    s.validate();
    return s;
  }
};

void add_sampler_options(CLI::App* cmd, SamplerArgs& args) {
  cmd->add_option("--sampler", args.kind, "greedy, temperature or top_k")->capture_default_str();
  cmd->add_option("--temperature", args.temperature)->capture_default_str();
  cmd->add_option("--top-k", args.top_k)->capture_default_str();
}

TransformerConfig verifier_config() {
  TransformerConfig c;
  c.vocab_size = 12;
  c.max_len = kMaxEquivalenceLength;
  c.layers = 2;
  c.heads = 2;
  c.hidden_size = 16;
  c.intermediate_size = 32;
  c.dropout_rate = 0.0;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistically masked language models: training, arbitrary-order generation, "
               "perplexity and equivalence checks"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config or preset");
  std::string config_path, preset, train_path, test_path, ckpt_out, log_out;
  std::optional<std::size_t> steps_override, batch_override;
  std::optional<std::uint64_t> seed_override;
  train_cmd->add_option("--config", config_path, "JSON run config");
  train_cmd->add_option("--preset", preset, "upmlm, bert-like or gpt-like");
  train_cmd->add_option("--train", train_path, "training corpus (overrides config)");
  train_cmd->add_option("--steps", steps_override);
  train_cmd->add_option("--batch-size", batch_override);
  train_cmd->add_option("--seed", seed_override);
  train_cmd->add_option("--checkpoint", ckpt_out, "checkpoint output path");
  train_cmd->add_option("--log", log_out, "loss log output (JSON lines)");

  // make-corpus
  auto* corpus_cmd = app.add_subcommand("make-corpus", "Write a synthetic structured text corpus");
  std::size_t corpus_bytes = 100000;
  std::uint64_t corpus_seed = 0;
  std::string corpus_out;
  corpus_cmd->add_option("--bytes", corpus_bytes)->capture_default_str();
  corpus_cmd->add_option("--seed", corpus_seed)->capture_default_str();
  corpus_cmd->add_option("--out", corpus_out)->required();

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "Generate text in arbitrary order");
  std::string gen_ckpt, order_kind = "random", order_file, anchors_file, trace_out, gen_out;
  std::size_t gen_length = 16;
  std::uint64_t gen_seed = 0;
  SamplerArgs gen_sampler;
  gen_cmd->add_option("--checkpoint", gen_ckpt)->required();
  gen_cmd->add_option("--length", gen_length)->capture_default_str();
  gen_cmd->add_option("--order", order_kind, "random, ltr or file")->capture_default_str();
  gen_cmd->add_option("--order-file", order_file, "1-based positions for --order file");
  gen_cmd->add_option("--anchors", anchors_file, "lines of <position>:<token>");
  gen_cmd->add_option("--seed", gen_seed)->capture_default_str();
  gen_cmd->add_option("--trace", trace_out, "per-step trace output (JSON lines)");
  gen_cmd->add_option("--out", gen_out, "JSON result output");
  add_sampler_options(gen_cmd, gen_sampler);

  // eval-ppl
  auto* ppl_cmd = app.add_subcommand("eval-ppl", "Teacher-forced perplexity on a test corpus");
  std::string ppl_ckpt, ppl_corpus, ppl_mode = "sequential", ppl_out;
  std::uint64_t ppl_seed = 0;
  ppl_cmd->add_option("--checkpoint", ppl_ckpt)->required();
  ppl_cmd->add_option("--corpus", ppl_corpus)->required();
  ppl_cmd->add_option("--mode", ppl_mode, "sequential or random")->capture_default_str();
  ppl_cmd->add_option("--seed", ppl_seed)->capture_default_str();
  ppl_cmd->add_option("--out", ppl_out, "JSON report output");

  // verify-equivalence
  auto* eq_cmd = app.add_subcommand("verify-equivalence",
                                    "Check uniform-prior masked LM == permutation LM by enumeration");
  std::size_t eq_n = 4;
  std::uint64_t eq_seed = 0;
  double eq_tol = 1e-9;
  double eq_init = 0.5;
  std::string eq_ckpt, eq_out;
  eq_cmd->add_option("--n", eq_n, "sequence length (1..6)")->capture_default_str();
  eq_cmd->add_option("--seed", eq_seed)->capture_default_str();
  eq_cmd->add_option("--tolerance", eq_tol)->capture_default_str();
  eq_cmd->add_option("--init-std", eq_init, "weight scale of the fresh random model")->capture_default_str();
  eq_cmd->add_option("--checkpoint", eq_ckpt, "use a trained bidirectional model instead");
  eq_cmd->add_option("--out", eq_out, "JSON report output");

  // bench-latency
  auto* bench_cmd = app.add_subcommand("bench-latency", "Time causal cached vs bidirectional generation");
  std::size_t bench_count = 4, bench_length = 32;
  std::uint64_t bench_seed = 0;
  std::string bench_causal, bench_bidir, bench_out;
  SamplerArgs bench_sampler;
  bench_cmd->add_option("--count", bench_count)->capture_default_str();
  bench_cmd->add_option("--length", bench_length)->capture_default_str();
  bench_cmd->add_option("--seed", bench_seed)->capture_default_str();
  bench_cmd->add_option("--causal", bench_causal, "causal checkpoint (default: fresh random)");
  bench_cmd->add_option("--bidirectional", bench_bidir, "bidirectional checkpoint (default: fresh random)");
  bench_cmd->add_option("--out", bench_out, "JSON report output");
  add_sampler_options(bench_cmd, bench_sampler);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      RunConfig config;
      if (!config_path.empty()) {
        config = run_config_from_json(json::parse(read_file(config_path)));
      } else if (!preset.empty()) {
        config = preset_config(preset);
      } else {
        throw InputError("train: give --config or --preset");
      }
      if (!train_path.empty()) config.train_corpus = train_path;
      if (steps_override) config.training.steps = *steps_override;
      if (batch_override) config.training.batch_size = *batch_override;
      if (seed_override) config.training.seed = *seed_override;
      if (!ckpt_out.empty()) config.checkpoint = ckpt_out;
      if (!log_out.empty()) config.loss_log = log_out;
      config.validate();
      const TrainResult result = train(config);
      const auto& log = result.loss_log;
      std::cout << "trained " << log.size() << " steps; first loss " << log.front().loss
                << ", final loss " << log.back().loss << '\n';
      if (!config.checkpoint.empty()) std::cout << "checkpoint: " << config.checkpoint << '\n';
      return 0;
    }

    if (*corpus_cmd) {
      write_file(corpus_out, synthetic_corpus(corpus_bytes, corpus_seed));
      return 0;
    }

    if (*gen_cmd) {
      const Checkpoint ckpt = load_checkpoint(gen_ckpt);
      const Vocabulary vocab = vocabulary_of(ckpt);
      if (gen_length > ckpt.model.config().max_len) {
        throw InputError("generate: --length exceeds the model's max_len of " +
                         std::to_string(ckpt.model.config().max_len));
      }
      GenerationConstraints constraints;
      constraints.length = gen_length;
      if (!anchors_file.empty()) constraints.anchors = read_anchors(anchors_file, vocab, gen_length);
      Rng rng(gen_seed);
      GenerationOrder order;
      if (order_kind == "random") {
        order = GenerationOrder::random(constraints, rng);
      } else if (order_kind == "ltr") {
        order = GenerationOrder::left_to_right(constraints);
      } else if (order_kind == "file") {
        if (order_file.empty()) throw InputError("generate: --order file needs --order-file");
        order = GenerationOrder::explicit_order(read_order(order_file));
      } else {
        throw InputError("generate: unknown --order '" + order_kind + "' (random, ltr or file)");
      }
      const GenerationResult result = generate(ckpt.model, constraints, order, gen_sampler.spec(), rng);
      const auto render = [&](const TokenSequence& ids) { return vocab.render_snapshot(ids); };
      if (!trace_out.empty()) write_file(trace_out, trace_to_jsonl(result.trace, render));
      std::cout << "step 0: " << render(result.trace.initial) << '\n';
      for (const auto& s : result.trace.steps) {
        std::cout << "step " << s.step << " (position " << s.position + 1 << "): " << render(s.snapshot) << '\n';
      }
      std::cout << "output: " << vocab.decode(result.tokens) << '\n';
      json order_json = json::array();
      for (auto p : order.sigma) order_json.push_back(p + 1);
      emit_json(gen_out, {{"text", vocab.decode(result.tokens)},
                          {"tokens", result.tokens},
                          {"order", order_json},
                          {"seed", gen_seed},
                          {"sampler", gen_sampler.kind}});
      return 0;
    }

    if (*ppl_cmd) {
      const Checkpoint ckpt = load_checkpoint(ppl_ckpt);
      const Vocabulary vocab = vocabulary_of(ckpt);
      const Corpus corpus = ingest(ppl_corpus, vocab.kind(), ckpt.model.config().max_len, &vocab, Split::kTest);
      const PplMode mode = parse_ppl_mode(ppl_mode);
      const bool causal = ckpt.model.config().attention_mode == AttentionMode::kCausal;
      const PplReport report = causal ? ppl_causal(ckpt.model, corpus.documents, mode)
                                      : ppl_bidirectional(ckpt.model, corpus.documents, mode, ppl_seed);
      std::cout << "mode " << to_string(mode) << ", " << report.token_count << " tokens, ppl "
                << report.ppl << '\n';
      emit_json(ppl_out, to_json(report));
      return 0;
    }

    if (*eq_cmd) {
      Transformer model = eq_ckpt.empty() ? Transformer::random(verifier_config(), eq_seed, eq_init)
                                          : load_checkpoint(eq_ckpt).model;
      if (eq_n < 1 || eq_n > kMaxEquivalenceLength || eq_n > model.config().max_len) {
        throw InputError("verify-equivalence: --n must lie in 1.." + std::to_string(kMaxEquivalenceLength));
      }
      Rng rng = Rng::split(eq_seed, 7);
      const std::size_t content = model.config().vocab_size - kFirstContentId;
      TokenSequence seq(eq_n);
      for (auto& t : seq) t = kFirstContentId + static_cast<TokenId>(rng.index(content));
      const EquivalenceReport report = verify_equivalence(model, seq, eq_tol);
      json j = to_json(report);
      j["sequence"] = seq;
      j["seed"] = eq_seed;
      emit_json(eq_out, j);
      std::cout << "N = " << report.n << ", C = (N+1)! = " << report.constant_c << '\n'
                << "  masked-LM side  sum_M a_M/K sum log p       = " << report.pmlm_exact << '\n'
                << "  permutation side sum_sigma sum_t log p / C   = " << report.aplm_sum_over_c << '\n'
                << "  (N+1) x masked-LM side                        = "
                << static_cast<double>(report.n + 1) * report.pmlm_exact << '\n'
                << "  mean over orders of sum_t log p              = " << report.aplm_mean << '\n'
                << "  max |gap| = " << report.max_abs_gap << " (tolerance " << report.tolerance << ")\n";
      for (const auto& e : report.duplication) {
        std::cout << "  K = " << e.k << ": " << e.groups << " groups, each counted " << e.count_min
                  << " times; (N-K)!(K-1)! = " << e.expected << (e.matches ? "  ok" : "  MISMATCH") << '\n';
      }
      std::cout << (report.passed ? "PASS" : "FAIL") << '\n';
      return report.passed ? 0 : kExitFailedCheck;
    }

    if (*bench_cmd) {
      TransformerConfig base;
      base.max_len = std::max(base.max_len, bench_length + 1);
      base.dropout_rate = 0.0;
      auto load_or_random = [&](const std::string& path, AttentionMode mode, std::uint64_t stream) {
        if (!path.empty()) return load_checkpoint(path).model;
        TransformerConfig c = base;
        c.attention_mode = mode;
        return Transformer::random(c, bench_seed + stream);
      };
      const Transformer causal = load_or_random(bench_causal, AttentionMode::kCausal, 1);
      const Transformer bidir = load_or_random(bench_bidir, AttentionMode::kBidirectional, 2);
      const LatencyBenchmark bench =
          bench_latency(causal, bidir, bench_count, bench_length, bench_sampler.spec(), bench_seed);
      std::cout << format_latency_table(bench);
      emit_json(bench_out, to_json(bench));
      return 0;
    }
  } catch (const UnsupportedMode& e) {
    std::cerr << "error: unsupported mode: " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}
