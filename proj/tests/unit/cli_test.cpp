#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cloze/cli/checks.hpp"
#include "cloze/cli/commands.hpp"
#include "cloze/cli/experiments.hpp"
#include "cloze/cli/manifest.hpp"
#include "cloze/cli/run_config.hpp"
#include "json.hpp"

using namespace cloze;
using namespace cloze::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cloze_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

// A configuration small enough to pretrain in well under a second.
const char* kTinyRun =
    "corpus = neighbor\n"
    "corpus_size = 300\n"
    "inner_vocab = 4\n"
    "line_tokens = 7\n"
    "d_model = 16\n"
    "n_heads = 2\n"
    "final_heads = 2\n"
    "ffn_dim = 32\n"
    "max_updates = 20\n"
    "warmup_steps = 2\n"
    "heldout_fraction = 0.1\n"
    "task_train = 20\n"
    "task_dev = 20\n"
    "task_epochs = 1\n";

}  // namespace

TEST(Manifest, ContentHashIsFnv1aOfBytes) {
  const auto dir = scratch("hash");
  write(dir / "a.txt", "a");
  // Reference FNV-1a 64 of "a".
  EXPECT_EQ(content_hash(dir / "a.txt"), 0xAF63DC4C8601EC8CULL);
  write(dir / "b.txt", "");
  EXPECT_EQ(content_hash(dir / "b.txt"), 0xCBF29CE484222325ULL);
}

TEST(Manifest, DirectoryHashIgnoresRunRecordsAndSeesContent) {
  const auto dir = scratch("dirhash");
  fs::create_directories(dir / "sub");
  write(dir / "sub" / "x.txt", "payload");
  const auto h = content_hash(dir);
  write(dir / "manifest.json", "{}");
  write(dir / "metrics.jsonl", "{\"wall\": 1}\n");
  EXPECT_EQ(content_hash(dir), h);
  write(dir / "sub" / "x.txt", "payloae");
  EXPECT_NE(content_hash(dir), h);
  fs::rename(dir / "sub" / "x.txt", dir / "sub" / "y.txt");
  EXPECT_NE(content_hash(dir), h);
}

TEST(Manifest, RoundTripAndSingleFile) {
  const auto dir = scratch("manifest");
  write(dir / "in.txt", "hello");
  RunManifest m;
  m.command = "test";
  m.seed = 42;
  m.config.set("k", "v");
  m.add_input("data", dir / "in.txt");
  m.write(dir / "out");
  m.write(dir / "out");
  std::size_t manifests = 0;
  for (const auto& e : fs::directory_iterator(dir / "out")) manifests += e.path().filename() == "manifest.json";
  EXPECT_EQ(manifests, 1u);
  const auto r = RunManifest::read(dir / "out");
  EXPECT_EQ(r.command, "test");
  EXPECT_EQ(r.seed, 42u);
  EXPECT_EQ(r.config.get("k"), "v");
  EXPECT_EQ(r.inputs.at("data").hash, hex64(content_hash(dir / "in.txt")));
  EXPECT_EQ(r.version, code_version());
  EXPECT_FALSE(r.finished.empty());
}

TEST(RunConfig, OverridesUnknownKeysAndSeeds) {
  RunConfig rc;
  EXPECT_THROW(rc.apply(parse_overrides({"no_such_key=1"})), ConfigError);
  EXPECT_THROW(parse_overrides({"missing-equals"}), ConfigError);
  EXPECT_THROW(RunConfig().apply(parse_overrides({"d_model=abc"})), ConfigError);

  RunConfig a, b;
  a.set_seed(5);
  b.set_seed(6);
  EXPECT_NE(a.model.init_seed, b.model.init_seed);
  EXPECT_NE(a.corpus.seed, b.corpus.seed);

  RunConfig c;
  c.apply(parse_overrides({"init_seed=77", "lr_peak=0.5", "task_lrs=0.01,0.001"}));
  c.set_seed(9);
  EXPECT_EQ(c.model.init_seed, 77u);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_DOUBLE_EQ(c.train.lr_peak, 0.5);
  EXPECT_EQ(c.task.lrs, (std::vector<double>{0.01, 0.001}));

  // Every key is materialized and reads back to the same configuration.
  RunConfig d;
  d.apply(c.to_kv());
  EXPECT_EQ(d.to_kv().entries(), c.to_kv().entries());
  EXPECT_EQ(c.to_kv().entries().size(), RunConfig::keys().size());
}

TEST(RunConfig, ValidationRejectsBadValues) {
  RunConfig rc;
  rc.apply(parse_overrides({"heldout_fraction=1"}));
  EXPECT_THROW(rc.validate(), ConfigError);
  RunConfig w;
  w.apply(parse_overrides({"warmup_steps=50", "max_updates=50"}));
  EXPECT_THROW(w.validate(), ConfigError);
}

TEST(Experiments, SplitAndBudgets) {
  std::vector<RawDoc> docs(10, RawDoc{"a b", "c"});
  const auto [train, held] = split_heldout(docs, 0.25);
  EXPECT_EQ(train.size(), 7u);
  EXPECT_EQ(held.size(), 3u);
  const auto [one_train, one_held] = split_heldout({RawDoc{"1", "2", "3", "4"}}, 0.5);
  EXPECT_EQ(one_train.front().size(), 2u);
  EXPECT_EQ(one_held.front().size(), 2u);

  std::vector<Example> ex(4);
  for (std::size_t i = 0; i < 4; ++i) ex[i].ids.assign(2 + 3, 4);
  EXPECT_EQ(budget_prefix(ex, 7).size(), 2u);
  EXPECT_EQ(budget_prefix(ex, 12).size(), 4u);
  EXPECT_THROW(budget_prefix(ex, 13), ConfigError);
  EXPECT_THROW(budget_prefix(ex, 2), ConfigError);
}

TEST(Checks, FreshLeakageAndCausalityPass) {
  CheckOptions o;
  o.trials = 10;
  const auto leak = leakage_check(nullptr, o);
  EXPECT_TRUE(leak.passed) << leak.line();
  EXPECT_EQ(leak.residual, 0.0);
  EXPECT_GT(leak.cases, 10u);
  // The harness is not vacuous: substitutions do move other positions.
  EXPECT_GT(leak.extra.at("substitutions_moving_other_positions").get<std::size_t>(), 0u);
  const auto caus = causality_check(nullptr, o);
  EXPECT_TRUE(caus.passed) << caus.line();
  EXPECT_EQ(caus.residual, 0.0);
}

TEST(Checks, SabotagedMaskFailsWithNamedPosition) {
  CheckOptions o;
  o.trials = 3;
  o.sabotage_mask = true;
  const auto r = leakage_check(nullptr, o);
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.residual, 0.0);
  EXPECT_NE(r.detail.find("position"), std::string::npos) << r.detail;
}

TEST(Checks, SampledGradcheckPassesPerObjective) {
  CheckOptions o;
  o.grad_elements = 3;
  const auto rs = gradcheck_suite(o);
  ASSERT_EQ(rs.size(), 3u);
  for (const auto& r : rs) {
    EXPECT_TRUE(r.passed) << r.line();
    EXPECT_LT(r.residual, 1e-4);
  }
  EXPECT_THROW(run_checks("nope", nullptr, o), ConfigError);
}

TEST(Commands, ExitCodes) {
  EXPECT_EQ(run(std::vector<std::string>{}), kExitConfigError);
  EXPECT_EQ(run({"no-such-command"}), kExitConfigError);
  EXPECT_EQ(run({"--help"}), kExitSuccess);
  EXPECT_EQ(run({"check", "--suite", "leakage", "--trials", "2"}), kExitSuccess);
  EXPECT_EQ(run({"check", "--suite", "leakage", "--trials", "2", "--sabotage-mask"}), kExitInvariantFailure);
  EXPECT_EQ(run({"check", "--suite", "bogus"}), kExitConfigError);
  const auto dir = scratch("exit");
  EXPECT_EQ(run({"synth", "--kind", "nonsense", "--out", (dir / "s").string()}), kExitConfigError);
  EXPECT_EQ(run({"pretrain", "--data", (dir / "missing").string(), "--out", (dir / "p").string()}), kExitConfigError);
}

TEST(Commands, PipelineWritesManifestsAndReruns) {
  const auto dir = scratch("pipeline");
  write(dir / "run.cfg", kTinyRun);
  const auto s = (dir / "syn").string();
  ASSERT_EQ(run({"synth", "--kind", "class-chain", "--size", "400", "--inner-vocab", "4", "--class-size", "4",
                 "--line-tokens", "5", "--task-train", "20", "--task-dev", "20", "--out", s}),
            kExitSuccess);
  EXPECT_TRUE(fs::exists(dir / "syn" / "task" / "task.cfg"));
  ASSERT_EQ(run({"build-vocab", "--input", s + "/corpus.txt", "--mode", "word", "--min-freq", "1", "--output",
                 (dir / "vocab").string()}),
            kExitSuccess);
  for (const char* out : {"p1", "p2"}) {
    ASSERT_EQ(run({"pretrain", "--config", (dir / "run.cfg").string(), "--data", s, "--vocab", (dir / "vocab").string(),
                   "--seed", "4", "--set", "max_updates=10", "--out", (dir / out).string()}),
              kExitSuccess);
  }
  // Same manifest inputs, same outputs.
  EXPECT_EQ(slurp(dir / "p1" / "summary.json"), slurp(dir / "p2" / "summary.json"));
  EXPECT_EQ(content_hash(dir / "p1" / "checkpoints"), content_hash(dir / "p2" / "checkpoints"));
  const auto m = RunManifest::read(dir / "p1");
  EXPECT_EQ(m.command, "pretrain");
  EXPECT_EQ(m.seed, 4u);
  EXPECT_EQ(m.config.get("max_updates"), "10");
  EXPECT_TRUE(m.inputs.contains("data"));
  EXPECT_TRUE(m.inputs.contains("vocab"));

  ASSERT_EQ(run({"finetune", "--checkpoint", (dir / "p1").string(), "--task", s + "/task/task.cfg", "--grid", "0.001",
                 "--seeds", "1", "--set", "epochs=1", "--out", (dir / "ft").string()}),
            kExitSuccess);
  ASSERT_EQ(run({"eval", "--checkpoint", (dir / "ft").string(), "--task", s + "/task/task.cfg", "--split", "dev",
                 "--out", (dir / "ev").string()}),
            kExitSuccess);
  const auto ev = nlohmann::json::parse(slurp(dir / "ev" / "eval.json"));
  const auto rep = nlohmann::json::parse(slurp(dir / "ft" / "report.json"));
  EXPECT_DOUBLE_EQ(ev.at("score").get<double>(), rep.at("best").at("dev_score").get<double>());
  EXPECT_EQ(run({"eval", "--checkpoint", (dir / "ft").string(), "--task", s + "/task/task.cfg", "--split", "test",
                 "--out", (dir / "ev2").string()}),
            kExitConfigError);
  EXPECT_EQ(run({"check", "--checkpoint", (dir / "p1").string(), "--suite", "leakage", "--trials", "2", "--out",
                 (dir / "chk").string()}),
            kExitSuccess);
  for (const char* out : {"p1", "syn", "vocab", "ft", "ev", "chk"}) EXPECT_TRUE(fs::exists(dir / out / "manifest.json"));
}

TEST(Commands, AblateTableFormatAndRerun) {
  const auto dir = scratch("ablate");
  write(dir / "run.cfg", kTinyRun);
  for (const char* out : {"a1", "a2"}) {
    ASSERT_EQ(run({"ablate", "--config", (dir / "run.cfg").string(), "--seed", "3", "--out", (dir / out).string()}),
              kExitSuccess);
  }
  const auto tsv = slurp(dir / "a1" / "ablation.tsv");
  EXPECT_EQ(tsv, slurp(dir / "a2" / "ablation.tsv"));
  std::istringstream in(tsv);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0].rfind("objective\tppl\t", 0), 0u);
  EXPECT_EQ(lines[1].rfind("cloze\t", 0), 0u);
  EXPECT_EQ(lines[2].rfind("bilm\t", 0), 0u);
  EXPECT_EQ(lines[3].rfind("triplet\t", 0), 0u);
}

TEST(Commands, DatascaleRowsAndErrors) {
  const auto dir = scratch("datascale");
  write(dir / "run.cfg", kTinyRun);
  const auto cfg = (dir / "run.cfg").string();
  ASSERT_EQ(run({"datascale", "--config", cfg, "--budgets", "300", "--no-task", "--out", (dir / "one").string()}),
            kExitSuccess);
  std::istringstream in(slurp(dir / "one" / "datascale.jsonl"));
  std::vector<nlohmann::json> rows;
  for (std::string l; std::getline(in, l);) rows.push_back(nlohmann::json::parse(l));
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].at("budget").get<std::size_t>(), 300u);
  EXPECT_LE(rows[0].at("tokens").get<std::size_t>(), 300u);
  EXPECT_GT(rows[0].at("heldout_ppl").get<double>(), 1.0);
  EXPECT_EQ(run({"datascale", "--config", cfg, "--budgets", "400,300", "--out", (dir / "x").string()}), kExitConfigError);
  EXPECT_EQ(run({"datascale", "--config", cfg, "--budgets", "300,99999999", "--out", (dir / "y").string()}),
            kExitConfigError);
}
