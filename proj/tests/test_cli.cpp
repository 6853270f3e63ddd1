#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fewshot/embeddings.hpp"
#include "fewshot/report_tables.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int exit_code;
  std::string out;
  std::string err;
};

const char* cli_binary() {
  const char* bin = std::getenv("FEWSHOT_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "FEWSHOT_BIN must point at the built CLI");
  return bin;
}

fs::path scratch() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "fewshot_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

RunResult run_cli(const std::string& args) {
  const fs::path out = scratch() / "stdout.txt";
  const fs::path err = scratch() / "stderr.txt";
  const std::string cmd = std::string(cli_binary()) + " " + args + " > " + out.string() + " 2> " +
                          err.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path write_fixture_corpus() {
  const fs::path p = scratch() / "corpus.txt";
  std::ofstream out(p);
  out << testsupport::synthetic_separable_text(12, 8, 19);
  return p;
}

fs::path ensure_artifact() {
  static fs::path artifact = [] {
    const fs::path corpus = write_fixture_corpus();
    const fs::path dir = scratch() / "artifact";
    RunResult r = run_cli("ingest --input " + corpus.string() + " --out " + dir.string() +
                          " --min-occurrences 3");
    REQUIRE(r.exit_code == 0);
    return dir / "corpus.bin";
  }();
  return artifact;
}

fs::path write_train_config(const std::string& name, const std::string& extra_model = "",
                            size_t steps = 60) {
  json cfg;
  cfg["corpus"] = ensure_artifact().string();
  cfg["split_sizes"] = {8, 2, 2};
  cfg["split_seed"] = 3;
  cfg["episode"] = {{"n_way", 2}, {"k_shot", 1}, {"batch_size", 6}};
  json model = {{"head", "matching"}, {"metric", "cosine"}, {"fce_enabled", true},
                {"fce_steps", 2},     {"d_word", 8},         {"init_seed", 5}};
  if (!extra_model.empty()) model["metric"] = extra_model;
  cfg["model"] = model;
  cfg["train"] = {{"steps", steps}, {"lr", 0.005},       {"eval_every", 30},
                  {"eval_episodes", 4}, {"clip_norm", 5.0}, {"seed", 11}};
  cfg["output_dir"] = (scratch() / ("run_" + name)).string();
  const fs::path p = scratch() / (name + ".json");
  std::ofstream out(p);
  out << cfg.dump(2);
  return p;
}

}  // namespace

TEST_CASE("metric table formatting") {
  fewshot::MetricTable t;
  t.metrics = {"cosine", "euclidean", "poincare", "minkowski:p=1", "minkowski:p=3"};
  t.shots = {1, 2, 3};
  t.cells = {
      {0.286, 0.328, 0.341},
      {0.301, 0.310, 0.354},
      {0.281, 0.306, 0.350},
      {0.275, 0.305, 0.377},
      {std::nullopt, 0.320, 0.355},
  };
  const std::string md = fewshot::metric_table_markdown(t);
  const std::string expect =
      "| Distance Metric | 1-Shot | 2-Shot | 3-Shot |\n"
      "|---|---|---|---|\n"
      "| cosine | 28.6% | 32.8% | 34.1% |\n"
      "| euclidean | 30.1% | 31.0% | 35.4% |\n"
      "| poincare | 28.1% | 30.6% | 35.0% |\n"
      "| minkowski:p=1 | 27.5% | 30.5% | 37.7% |\n"
      "| minkowski:p=3 | - | 32.0% | 35.5% |\n";
  CHECK(md == expect);

  // CSV agrees with the markdown cell for cell
  const std::string csv = fewshot::metric_table_csv(t);
  std::istringstream md_lines(md), csv_lines(csv);
  std::string mline, cline;
  std::getline(md_lines, mline);  // headers
  std::getline(csv_lines, cline);
  std::getline(md_lines, mline);  // separator row only in markdown
  size_t rows = 0;
  while (std::getline(md_lines, mline) && std::getline(csv_lines, cline)) {
    std::vector<std::string> md_cells, csv_cells;
    std::istringstream ms(mline), cs(cline);
    std::string cell;
    std::getline(ms, cell, '|');  // leading empty
    while (std::getline(ms, cell, '|')) {
      if (!cell.empty()) md_cells.push_back(cell.substr(1, cell.size() - 2));
    }
    while (std::getline(cs, cell, ',')) csv_cells.push_back(cell);
    REQUIRE(md_cells.size() == csv_cells.size());
    for (size_t i = 0; i < md_cells.size(); ++i) CHECK(md_cells[i] == csv_cells[i]);
    ++rows;
  }
  CHECK(rows == 5);
}

TEST_CASE("cli: ingest") {
  SUBCASE("missing file exits 2 and names the path") {
    RunResult r = run_cli("ingest --input /nonexistent/corpus.txt --out " +
                          (scratch() / "x").string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("/nonexistent/corpus.txt") != std::string::npos);
  }

  SUBCASE("fixture stats and idempotent artifact bytes") {
    const fs::path corpus = write_fixture_corpus();
    const fs::path dir = scratch() / "artifact_idem";
    RunResult r1 = run_cli("ingest --input " + corpus.string() + " --out " + dir.string() +
                           " --min-occurrences 3");
    CHECK(r1.exit_code == 0);
    CHECK(r1.out.find("eligible label words (>= 3 distinct sentences): 12") != std::string::npos);
    CHECK(r1.out.find("sentences: 96") != std::string::npos);
    const std::string bytes1 = slurp(dir / "corpus.bin");
    RunResult r2 = run_cli("ingest --input " + corpus.string() + " --out " + dir.string() +
                           " --min-occurrences 3");
    CHECK(r2.exit_code == 0);
    CHECK(slurp(dir / "corpus.bin") == bytes1);
  }
}

TEST_CASE("cli: split") {
  const fs::path artifact = ensure_artifact();
  const fs::path out = scratch() / "split.json";
  RunResult r = run_cli("split --corpus " + artifact.string() + " --sizes 8 2 2 --seed 3 --out " +
                        out.string());
  CHECK(r.exit_code == 0);
  const json j = json::parse(slurp(out));
  CHECK(j.at("train_words").size() == 8);
  CHECK(j.at("validation_words").size() == 2);
  CHECK(j.at("test_words").size() == 2);
}

TEST_CASE("cli: train, eval and determinism") {
  const fs::path cfg = write_train_config("main");
  RunResult r = run_cli("train --config " + cfg.string());
  CHECK(r.exit_code == 0);
  const fs::path run_dir = scratch() / "run_main";
  CHECK(fs::exists(run_dir / "checkpoint.best.bin"));
  CHECK(fs::exists(run_dir / "checkpoint.last.bin"));
  CHECK(fs::exists(run_dir / "config.json"));
  CHECK(fs::exists(run_dir / "train.log"));
  CHECK(fs::exists(run_dir / "eval.test.json"));

  SUBCASE("invalid metric exits 2 naming the options") {
    RunResult bad = run_cli("train --config " + cfg.string() + " --metric chebyshev");
    CHECK(bad.exit_code == 2);
    CHECK(bad.err.find("cosine") != std::string::npos);
  }

  SUBCASE("unknown config keys are all reported at once") {
    json j = json::parse(slurp(cfg));
    j["bogus_key"] = 1;
    j["model"]["other_bogus"] = 2;
    const fs::path bad_cfg = scratch() / "bad.json";
    std::ofstream(bad_cfg) << j.dump();
    RunResult bad = run_cli("train --config " + bad_cfg.string());
    CHECK(bad.exit_code == 2);
    CHECK(bad.err.find("bogus_key") != std::string::npos);
    CHECK(bad.err.find("model.other_bogus") != std::string::npos);
  }

  SUBCASE("eval is reproducible across processes") {
    const std::string ckpt = (run_dir / "checkpoint.best.bin").string();
    const fs::path rep1 = scratch() / "rep1.json";
    const fs::path rep2 = scratch() / "rep2.json";
    RunResult e1 = run_cli("eval --checkpoint " + ckpt +
                           " --split test --episodes 20 --seed 99 --out " + rep1.string());
    RunResult e2 = run_cli("eval --checkpoint " + ckpt +
                           " --split test --episodes 20 --seed 99 --out " + rep2.string());
    CHECK(e1.exit_code == 0);
    CHECK(e2.exit_code == 0);
    CHECK(e1.out == e2.out);
    CHECK(slurp(rep1) == slurp(rep2));
    CHECK(e1.out.find("accuracy") != std::string::npos);
  }

  SUBCASE("resume continues a run") {
    json j = json::parse(slurp(cfg));
    j["train"]["steps"] = 90;
    const fs::path more = scratch() / "more.json";
    std::ofstream(more) << j.dump();
    RunResult res = run_cli("train --config " + more.string() + " --resume");
    CHECK(res.exit_code == 0);
    CHECK(res.out.find("resuming from step 60") != std::string::npos);
  }
}

TEST_CASE("cli: compare-metrics with fabricated cells") {
  const fs::path out_root = scratch() / "grid";
  fs::create_directories(out_root / "cosine_k1");
  // fabricated accuracy report + placeholder checkpoint
  std::ofstream(out_root / "cosine_k1" / "eval.test.json")
      << R"({"episodes":10,"mean_accuracy":0.5,"stderr_accuracy":0.01,"per_episode":[],)"
      << R"("n_way":2,"k_shot":1,"metric":"cosine","model":"matching"})";
  std::ofstream(out_root / "cosine_k1" / "checkpoint.best.bin") << "placeholder";

  RunResult r = run_cli("compare-metrics --metrics cosine euclidean --shots 1 --out " +
                        out_root.string());
  CHECK(r.exit_code == 0);  // the missing euclidean cell is absent, not fatal
  const std::string md = slurp(out_root / "metric_table.md");
  CHECK(md.find("| cosine | 50.0% |") != std::string::npos);
  CHECK(md.find("| euclidean | - |") != std::string::npos);
  const std::string csv = slurp(out_root / "metric_table.csv");
  CHECK(csv.find("cosine,50.0%") != std::string::npos);
  CHECK(csv.find("euclidean,-") != std::string::npos);
}

TEST_CASE("cli: exports") {
  // train a small FCE-off matching model so embeddings are support-independent
  json cfg = json::parse(slurp(write_train_config("exports")));
  cfg["model"]["fce_enabled"] = false;
  cfg["train"]["steps"] = 20;
  cfg["output_dir"] = (scratch() / "run_exports").string();
  const fs::path cfg_path = scratch() / "exports.json";
  std::ofstream(cfg_path) << cfg.dump();
  REQUIRE(run_cli("train --config " + cfg_path.string()).exit_code == 0);
  const std::string ckpt = (scratch() / "run_exports" / "checkpoint.best.bin").string();

  // build an episode file: two episodes, one with a duplicated query sentence
  fewshot::TaskSet tasks = fewshot::load_task_set(ensure_artifact().string());
  const auto words = testsupport::all_group_words(tasks);
  std::vector<fewshot::Episode> episodes;
  for (uint64_t e = 0; e < 2; ++e) {
    fewshot::Rng rng(fewshot::mix_seed(55, 0, e));
    episodes.push_back(
        fewshot::sample_episode(words, fewshot::EpisodeSpec{3, 1, 6}, tasks, rng, e));
  }
  // duplicate support 0's sentence as a query of the same class
  episodes[0].query[0] = episodes[0].support[0];
  const fs::path ep_path = scratch() / "episodes.jsonl";
  fewshot::export_episodes(episodes, ep_path.string());

  SUBCASE("attention CSV") {
    const fs::path out = scratch() / "attention.csv";
    RunResult r = run_cli("export-attention --checkpoint " + ckpt + " --episodes " +
                          ep_path.string() + " --out " + out.string());
    CHECK(r.exit_code == 0);
    std::ifstream in(out);
    std::string header;
    std::getline(in, header);
    // header = query_word, then the support label words in emission order
    std::ostringstream expect;
    expect << "query_word";
    for (const auto& [tokens, cls] : episodes[0].support)
      expect << "," << episodes[0].label_words[cls];
    CHECK(header == expect.str());
    std::string line;
    size_t rows = 0;
    bool first = true;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string cell;
      std::getline(ls, cell, ',');
      double sum = 0.0, maxv = -1.0;
      size_t arg = 0, idx = 0;
      while (std::getline(ls, cell, ',')) {
        const double v = std::stod(cell);
        sum += v;
        if (v > maxv) {
          maxv = v;
          arg = idx;
        }
        ++idx;
      }
      CHECK(std::fabs(sum - 1.0) < 1e-6);
      if (first) {
        // the duplicated query attends hardest to its own support sentence
        CHECK(arg == 0);
        first = false;
      }
      ++rows;
    }
    CHECK(rows == episodes[0].query.size());
  }

  SUBCASE("attention export rejects non-matching heads") {
    json pc = json::parse(slurp(cfg_path));
    pc["model"]["head"] = "prototypical";
    pc["output_dir"] = (scratch() / "run_proto").string();
    const fs::path proto_cfg = scratch() / "proto.json";
    std::ofstream(proto_cfg) << pc.dump();
    REQUIRE(run_cli("train --config " + proto_cfg.string()).exit_code == 0);
    RunResult r = run_cli("export-attention --checkpoint " +
                          (scratch() / "run_proto" / "checkpoint.best.bin").string() +
                          " --episodes " + ep_path.string() + " --out /tmp/na.csv");
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("matching") != std::string::npos);
  }

  SUBCASE("embeddings CSV") {
    const fs::path out = scratch() / "embeddings.csv";
    RunResult r = run_cli("export-embeddings --checkpoint " + ckpt + " --episodes " +
                          ep_path.string() + " --out " + out.string());
    CHECK(r.exit_code == 0);
    std::ifstream in(out);
    std::string header;
    std::getline(in, header);
    CHECK(header.rfind("label,role,e0,", 0) == 0);
    size_t expected_rows = 0;
    for (const auto& ep : episodes) expected_rows += ep.support.size() + ep.query.size();
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::istringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      REQUIRE(cells.size() == 2 + fewshot::kEmbedDim);  // label, role, 64 dims
      rows.push_back(std::move(cells));
    }
    CHECK(rows.size() == expected_rows);
    // FCE off: the duplicated sentence embeds identically as support and query
    const auto& support_row = rows[0];
    const auto& query_row = rows[episodes[0].support.size()];
    CHECK(support_row[0] == query_row[0]);
    for (size_t d = 2; d < support_row.size(); ++d) CHECK(support_row[d] == query_row[d]);
  }
}

TEST_CASE("cli: output root env var") {
  json cfg = json::parse(slurp(write_train_config("envroot", "", 5)));
  cfg["train"]["eval_every"] = 5;
  cfg["output_dir"] = "nested/run";
  const fs::path cfg_path = scratch() / "envroot.json";
  std::ofstream(cfg_path) << cfg.dump();
  const fs::path root = scratch() / "rootdir";
  const std::string cmd = "FEWSHOT_OUTPUT_ROOT=" + root.string() + " " + cli_binary() +
                          " train --config " + cfg_path.string() + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(fs::exists(root / "nested/run/checkpoint.best.bin"));
}
