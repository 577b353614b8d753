// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pmlm/app/corpus.h"
#include "pmlm/app/run_config.h"
#include "pmlm/app/train.h"
#include "pmlm/evaluation/evaluation.h"
#include "pmlm/generation/generation.h"
#include "pmlm/model/checkpoint.h"
#include "pmlm/objectives/equivalence.h"
#include "pmlm/objectives/objectives.h"
#include "support.h"

#ifndef PMLM_CLI_PATH
#error "PMLM_CLI_PATH must point at the pmlm executable"
#endif

using namespace pmlm;
using namespace pmlm::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "pmlm_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_bytes(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(PMLM_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

TransformerConfig verifier_config() {
  TransformerConfig c = tiny_config();
  c.max_len = 8;
  return c;
}

// 1. Equivalence theorem on 20 seeded random models, N = 1..5.
Outcome equivalence() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  bool ok = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Transformer model = Transformer::random(verifier_config(), 1000 + seed, 0.5);
    Rng rng = Rng::split(seed, 7);
    for (std::size_t n = 1; n <= 5; ++n) {
      const auto report = verify_equivalence(model, random_tokens(n, 12, rng), 1e-9);
      worst = std::max(worst, report.max_abs_gap);
      ok = ok && report.passed && report.max_abs_gap < 1e-9;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream d;
  d << "100 checks, max gap " << worst << ", " << secs << " s";
  return {ok && secs < 120.0, d.str()};
}

// 2. Duplication factor and Beta identity in exact integers.
Outcome duplication() {
  bool ok = true;
  std::size_t entries = 0;
  for (std::size_t n = 1; n <= 7; ++n) {
    for (const auto& e : duplication_audit(n)) {
      ok = ok && e.matches && e.count_min == e.expected && e.count_max == e.expected;
      ++entries;
    }
  }
  std::size_t beta = 0;
  for (const auto& e : beta_identity_audit(20)) {
    ok = ok && e.matches;
    ++beta;
  }
  return {ok, std::to_string(entries) + " (N,K) duplication entries, " + std::to_string(beta) + " Beta entries"};
}

// 3. Prior normalisation and the uniform marginal of K.
Outcome normalisation() {
  double worst = 0.0;
  for (const auto& prior : {MaskingPrior::uniform(), MaskingPrior::point_mass(0.15),
                            MaskingPrior::truncated_uniform(0.2, 0.8)}) {
    for (std::size_t n = 1; n <= 12; ++n) {
      double total = 0.0;
      for (const auto& p : enumerate_masks(n)) total += mask_probability(p, prior).alpha();
      worst = std::max(worst, std::abs(total - 1.0));
    }
  }
  const std::size_t n = 10;
  const int samples = 100000;
  std::vector<double> counts(n + 1, 0.0);
  Rng rng(2024);
  for (int i = 0; i < samples; ++i) counts[sample_mask(n, sample_ratio(MaskingPrior::uniform(), rng), rng).count()] += 1;
  const double expected = static_cast<double>(samples) / (n + 1);
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const double critical = 29.588;  // chi-square, 10 dof, upper 0.001
  std::ostringstream d;
  d << "max |sum - 1| " << worst << ", chi2 " << chi2 << " vs " << critical;
  return {worst < 1e-12 && chi2 < critical, d.str()};
}

// 4. Full-model finite-difference gradient check.
Outcome gradients() {
  const TokenSequence seq = {3, 7, 4, 11, 5, 9, 6, 8};
  double worst = 0.0;
  std::string where;
  for (auto mode : {AttentionMode::kBidirectional, AttentionMode::kCausal}) {
    for (auto pos : {PositionalKind::kAbsolute, PositionalKind::kRelative}) {
      Transformer m = Transformer::random(tiny_config(mode, pos), 21, 0.3);
      std::vector<std::pair<std::string, Tensor>> leaves(m.params().begin(), m.params().end());
      const MaskPattern pattern = MaskPattern::from_indices(8, std::vector<std::size_t>{0, 3, 4, 7});
      auto loss = [&] {
        return mode == AttentionMode::kCausal ? ar_loss_graph(m, seq) : mlm_loss_graph(m, seq, pattern);
      };
      const auto res = grad_check(loss, leaves);
      if (res.max_rel_error >= worst) {
        worst = res.max_rel_error;
        where = to_string(mode) + "/" + to_string(pos) + " " + res.worst;
      }
    }
  }
  std::ostringstream d;
  d << "max rel err " << worst << " (" << where << ")";
  return {worst < 1e-4, d.str()};
}

// 5. Monte-Carlo estimator against exact enumeration.
Outcome monte_carlo() {
  const Transformer m = Transformer::random(tiny_config(), 55, 0.6);
  const TokenSequence seq = {4, 9, 6, 10};
  const double exact = pmlm_exact_loss(m, seq, MaskingPrior::uniform()).value;
  Rng rng(5);
  const int samples = 10000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < samples; ++i) {
    const double v = pmlm_training_step(m, seq, MaskingPrior::uniform(), rng, ZeroMaskPolicy::kZeroLoss).value;
    sum += v;
    sq += v * v;
  }
  const double mean = sum / samples;
  const double se = std::sqrt((sq / samples - mean * mean) / (samples - 1));
  std::ostringstream d;
  d << "mean " << mean << ", exact " << exact << ", |diff| / se " << std::abs(mean - exact) / se;
  return {std::abs(mean - exact) < 3 * se, d.str()};
}

// 6. Desk-scale training of the three presets.
Outcome desk_training() {
  const double cpu_start = cpu_seconds();
  const fs::path train_path = work_dir() / "train.txt";
  const fs::path test_path = work_dir() / "test.txt";
  write_bytes(train_path, synthetic_corpus(100000, 1));
  write_bytes(test_path, synthetic_corpus(4000, 2));
  bool ok = true;
  std::ostringstream d;
  std::vector<PplRow> rows;
  for (const std::string preset : {"upmlm", "bert-like", "gpt-like"}) {
    RunConfig config = preset_config(preset);
    config.train_corpus = train_path.string();
    config.checkpoint = (work_dir() / (preset + ".ckpt")).string();
    const TrainResult trained = train(config);
    const Corpus test = ingest(test_path, config.tokenizer, config.model.max_len, &trained.vocabulary, Split::kTest);

    TransformerConfig untrained_cfg = config.model;
    untrained_cfg.vocab_size = trained.vocabulary.size();
    const Transformer untrained = Transformer::random(untrained_cfg, *config.training.seed, config.training.init_std);

    const bool causal = config.model.attention_mode == AttentionMode::kCausal;
    auto ppl = [&](const Transformer& m, PplMode mode) {
      return causal ? ppl_causal(m, test.documents, mode).ppl : ppl_bidirectional(m, test.documents, mode, 7).ppl;
    };
    const double base = ppl(untrained, PplMode::kSequential);
    const double seq = ppl(trained.model, PplMode::kSequential);
    PplRow row{preset, seq, std::nullopt};
    ok = ok && seq < 0.6 * base;
    d << preset << " untrained " << base << " -> " << seq;
    if (preset == "upmlm") {
      row.random = ppl(trained.model, PplMode::kRandom);
      ok = ok && *row.random <= 1.35 * seq;
      d << " (random " << *row.random << ", ratio " << *row.random / seq << ")";
    }
    d << "; ";
    rows.push_back(row);
  }
  const double cpu = cpu_seconds() - cpu_start;
  std::cout << format_ppl_table(rows);
  d << "cpu " << cpu << " s";
  return {ok && cpu < 1800.0, d.str()};
}

// 7. Generation invariants over randomized runs.
Outcome generation_invariants() {
  TransformerConfig cfg = tiny_config();
  cfg.max_len = 32;
  const Transformer m = Transformer::random(cfg, 77, 0.8);
  Rng rng(31);
  std::size_t failures = 0;
  for (int run = 0; run < 1000; ++run) {
    GenerationConstraints c;
    c.length = 1 + rng.index(32);
    for (std::size_t p = 0; p < c.length; ++p) {
      if (rng.uniform() < 0.25) c.anchors[p] = kFirstContentId + static_cast<TokenId>(rng.index(9));
    }
    const auto order = GenerationOrder::random(c, rng);
    const auto result = generate(m, c, order, SamplerSpec::greedy(), rng);
    bool ok = std::count(result.tokens.begin(), result.tokens.end(), kMaskId) == 0;
    for (const auto& [p, tok] : c.anchors) ok = ok && result.tokens[p] == tok;

    // Replay the trace step by step from its initial snapshot.
    TokenSequence replay = result.trace.initial;
    for (const auto& step : result.trace.steps) {
      ok = ok && replay[step.position] == kMaskId;
      replay[step.position] = step.token;
      ok = ok && replay == step.snapshot;
    }
    ok = ok && replay == result.tokens;
    // Regenerate from a random intermediate snapshot.
    if (!order.sigma.empty()) {
      const std::size_t t = rng.index(order.sigma.size());
      GenerationConstraints resumed{c.length, {}};
      const TokenSequence& snap = t == 0 ? result.trace.initial : result.trace.steps[t - 1].snapshot;
      for (std::size_t p = 0; p < snap.size(); ++p) {
        if (snap[p] != kMaskId) resumed.anchors[p] = snap[p];
      }
      Rng other(run);
      const auto again = generate(m, resumed,
                                  GenerationOrder::explicit_order({order.sigma.begin() + static_cast<long>(t), order.sigma.end()}),
                                  SamplerSpec::greedy(), other);
      ok = ok && again.tokens == result.tokens;
    }
    // Identity order against the left-to-right entry point.
    const std::size_t plen = rng.index(c.length);
    TokenSequence prompt(result.tokens.begin(), result.tokens.begin() + static_cast<long>(plen));
    GenerationConstraints prefix{c.length, {}};
    for (std::size_t i = 0; i < plen; ++i) prefix.anchors[i] = prompt[i];
    Rng r1(run), r2(run);
    const auto identity = generate(m, prefix, GenerationOrder::left_to_right(prefix), SamplerSpec::greedy(), r1);
    ok = ok && identity.tokens == generate_left_to_right(m, prompt, c.length, SamplerSpec::greedy(), r2);
    failures += !ok;
  }
  return {failures == 0, std::to_string(failures) + " of 1000 runs violated an invariant"};
}

Vocabulary small_vocabulary() { return Vocabulary::build(TokenizerKind::kChar, {"abcdefghi"}); }

// 8. Random-order perplexity refused on a causal checkpoint.
Outcome causal_refusal() {
  TransformerConfig cfg = tiny_config(AttentionMode::kCausal);
  const fs::path ckpt = work_dir() / "causal_random.ckpt";
  save_checkpoint(ckpt, Transformer::random(cfg, 3), json{{"vocabulary", small_vocabulary().to_json()}});
  const fs::path corpus = work_dir() / "refusal.txt";
  write_bytes(corpus, "abc\nfed\n");
  const fs::path log = work_dir() / "refusal.log";
  const int code = run_cli("eval-ppl --checkpoint " + ckpt.string() + " --corpus " + corpus.string() + " --mode random", log);
  const std::string msg = read_bytes(log);
  const int sequential = run_cli("eval-ppl --checkpoint " + ckpt.string() + " --corpus " + corpus.string(), work_dir() / "seq.log");
  const bool cites = msg.find("unsupported mode") != std::string::npos;
  return {code != 0 && cites && sequential == 0,
          "exit " + std::to_string(code) + (cites ? ", message cites unsupported mode" : ", message missing") +
              "; sequential exit " + std::to_string(sequential)};
}

// 9. Latency: bidirectional full recompute vs causal cache.
Outcome latency() {
  TransformerConfig cfg;
  cfg.dropout_rate = 0.0;
  cfg.attention_mode = AttentionMode::kCausal;
  const Transformer causal = Transformer::random(cfg, 1);
  cfg.attention_mode = AttentionMode::kBidirectional;
  const Transformer bidir = Transformer::random(cfg, 2);
  const auto bench = bench_latency(causal, bidir, 2, 32, SamplerSpec::greedy(), 5);
  const std::string table = format_latency_table(bench);
  std::cout << table;
  const bool shape = bench.rows.size() == 2 && table.find("Models") != std::string::npos &&
                     table.find("| Cost Time") != std::string::npos;
  std::ostringstream d;
  d << "causal " << bench.rows[0].wall_seconds << " s, bidirectional " << bench.rows[1].wall_seconds
    << " s, ratio " << bench.rows[1].ratio_vs_baseline;
  return {shape && bench.rows[1].wall_seconds > bench.rows[0].wall_seconds, d.str()};
}

// 10. Checkpoint round trip and seeded CLI determinism.
Outcome determinism() {
  const fs::path dir = work_dir() / "det";
  fs::create_directories(dir);
  bool ok = true;
  std::vector<std::string> mismatched;

  // Library round trip: save -> load -> save.
  const Transformer model = Transformer::random(tiny_config(), 9);
  const json meta{{"vocabulary", small_vocabulary().to_json()}};
  save_checkpoint(dir / "a.ckpt", model, meta);
  const Checkpoint loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", loaded.model, loaded.metadata);
  if (read_bytes(dir / "a.ckpt") != read_bytes(dir / "b.ckpt")) mismatched.push_back("checkpoint round trip");

  // Each seeded subcommand twice.
  const std::string corpus = (dir / "corpus").string();
  const std::string test = (dir / "test.txt").string();
  RunConfig rc = preset_config("upmlm");
  rc.model.max_len = 48;
  rc.model.layers = 1;
  rc.model.hidden_size = 16;
  rc.model.heads = 2;
  rc.model.intermediate_size = 32;
  rc.training.steps = 30;
  rc.training.batch_size = 4;
  rc.train_corpus = corpus;
  write_bytes(dir / "config.json", to_json(rc).dump(2));
  write_bytes(dir / "anchors.txt", "1:t\n5:c\n");

  for (int rep = 0; rep < 2; ++rep) {
    const std::string r = std::to_string(rep);
    // Outputs land at fixed paths (the run config embeds them) and are copied aside per repeat.
    auto path = [&](const std::string& name) { return (dir / name).string(); };
    int code = 0;
    code |= run_cli("make-corpus --bytes 6000 --seed 4 --out " + corpus, path("mk.log"));
    code |= run_cli("make-corpus --bytes 800 --seed 5 --out " + test, path("mk2.log"));
    code |= run_cli("train --config " + (dir / "config.json").string() + " --checkpoint " + path("ckpt") +
                        " --log " + path("loss"),
                    path("train.log"));
    code |= run_cli("generate --checkpoint " + path("ckpt") + " --length 16 --order random --seed 3 --sampler top_k --top-k 5 --anchors " +
                        (dir / "anchors.txt").string() + " --trace " + path("trace") + " --out " + path("gen"),
                    path("gen.log"));
    code |= run_cli("eval-ppl --checkpoint " + path("ckpt") + " --corpus " + test + " --mode random --seed 2 --out " + path("ppl"),
                    path("ppl.log"));
    code |= run_cli("verify-equivalence --n 4 --seed 7 --out " + path("eq"), path("eq.log"));
    if (code != 0) {
      ok = false;
      mismatched.push_back("a subcommand failed on repeat " + r);
    }
    for (const std::string name : {"corpus", "ckpt", "loss", "trace", "gen", "ppl", "eq", "gen.log", "ppl.log", "eq.log"}) {
      if (fs::exists(dir / name)) fs::copy_file(dir / name, dir / (name + r), fs::copy_options::overwrite_existing);
    }
  }
  for (const std::string name : {"corpus", "ckpt", "loss", "trace", "gen", "ppl", "eq", "gen.log", "ppl.log", "eq.log"}) {
    const std::string a = read_bytes(dir / (name + "0")), b = read_bytes(dir / (name + "1"));
    if (a.empty() || a != b) mismatched.push_back(name);
  }
  ok = ok && mismatched.empty();
  std::string detail = "round trip and make-corpus/train/generate/eval-ppl/verify-equivalence repeats";
  if (!mismatched.empty()) {
    detail += "; mismatched:";
    for (const auto& m : mismatched) detail += " " + m;
  } else {
    detail += " are byte-identical";
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "equivalence theorem", equivalence},
      {2, "duplication factor and Beta identity", duplication},
      {3, "mask-prior normalization", normalisation},
      {4, "full-model gradient check", gradients},
      {5, "Monte-Carlo estimator", monte_carlo},
      {6, "desk-scale training", desk_training},
      {7, "generation invariants", generation_invariants},
      {8, "random-mode refusal on causal checkpoint", causal_refusal},
      {9, "latency benchmark", latency},
      {10, "checkpoint and determinism", determinism},
  };
  // Optional argument: comma-free list of criterion ids to run, e.g. "1 2 7".
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

  std::vector<std::string> lines;
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::ostringstream line;
    line << (o.passed ? "PASS" : "FAIL") << "  criterion " << c.id << ": " << c.name << " -- " << o.detail;
    std::cout << line.str() << std::endl;
    lines.push_back(line.str());
    failed += !o.passed;
  }
  std::cout << "\nsummary\n";
  for (const auto& l : lines) std::cout << l << '\n';
  return failed == 0 ? 0 : 1;
}
