#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "json.hpp"
#include "ptuner/archive.hpp"
#include "ptuner/cli.hpp"

using namespace ptuner;
using namespace ptuner::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("ptuner_cli_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

int run_binary(const std::string& args) {
    const std::string cmd = std::string(PARETO_TUNER_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig small_config(const fs::path& out) {
    auto cfg = parse_experiment_config(R"({"population_size": 8, "generations": 4, "repeats": 2, "master_seed": 11})");
    cfg.output_dir = out;
    return cfg;
}

} // namespace

TEST_CASE("config defaults match the reference setup") {
    const auto cfg = parse_experiment_config("{}");
    CHECK(cfg.base_prompt == "two people and a bus");
    CHECK(cfg.nsga == NsgaConfig{});
    CHECK(cfg.repeats == 15);
    CHECK(cfg.evaluator.kind == EvaluatorSpec::Kind::surrogate);
    CHECK(cfg.hv_ref == RefPoint{1.0, 50000.0});
    CHECK(cfg.space == SearchSpace::default_space());
}

TEST_CASE("config parsing") {
    const auto cfg = parse_experiment_config(R"({
        "mode": "weighted_single", "weights": {"quality": 1, "time": 0},
        "population_size": 10, "generations": 3, "repeats": 4, "master_seed": 99,
        "evaluator": {"kind": "external", "command": "python adapter.py --fast", "request_timeout_ms": 1234},
        "parallelism": 2, "retries": 3, "cache_dir": "cache", "hv_ref": {"quality_loss": 1, "time_ms": 60000},
        "output_dir": "out"})",
                                             "/base");
    CHECK(cfg.nsga.mode == Mode::weighted_single);
    CHECK(cfg.nsga.weights == ScalingWeights{1.0, 0.0});
    CHECK(cfg.nsga.population_size == 10);
    CHECK(cfg.repeats == 4);
    CHECK(cfg.nsga.master_seed == 99);
    CHECK(cfg.evaluator.kind == EvaluatorSpec::Kind::external);
    CHECK(cfg.evaluator.command == std::vector<std::string>{"python", "adapter.py", "--fast"});
    CHECK(cfg.evaluator.request_timeout.count() == 1234);
    CHECK(cfg.parallelism == 2);
    CHECK(cfg.cache_dir == fs::path("/base/cache"));
    CHECK(cfg.output_dir == fs::path("/base/out"));
    CHECK(cfg.hv_ref.time_ref == 60000.0);

    const auto surrogate = parse_experiment_config(R"({"evaluator": {"surrogate": {"noise_seed": 5, "noise_sigma": 0}}})");
    CHECK(surrogate.evaluator.surrogate.noise_seed == 5);
    CHECK(surrogate.evaluator.surrogate.noise_sigma == 0.0);
}

TEST_CASE("config errors") {
    for (const char* text : {
             "not json",
             "[]",
             R"({"population": 25})",
             R"({"mode": "greedy"})",
             R"({"repeats": 0})",
             R"({"mutation_rate": 2})",
             R"({"weights": {"quality": 1, "speed": 0}})",
             R"({"evaluator": {"kind": "external"}})",
             R"({"evaluator": {"kind": "gpu"}})",
             R"({"evaluator": {"surrogate": {"noise_sigma": -1}}})",
             R"({"hv_ref": {"quality_loss": 0}})",
             R"({"generations": "many"})",
             R"({"space_file": "/nonexistent/space.json"})",
         }) {
        CAPTURE(text);
        CHECK_THROWS_AS(parse_experiment_config(text), ConfigError);
    }
}

TEST_CASE("config JSON round trip") {
    TempDir t("roundtrip");
    auto cfg = small_config(t.path / "out");
    cfg.nsga.mode = Mode::weighted_single;
    cfg.evaluator.surrogate.noise_seed = 3;
    write(t.path / "cfg.json", experiment_config_to_json(cfg));
    const auto back = load_experiment_config(t.path / "cfg.json");
    CHECK(back.nsga == cfg.nsga);
    CHECK(back.repeats == cfg.repeats);
    CHECK(back.evaluator.surrogate.noise_seed == 3);
    CHECK(back.output_dir == cfg.output_dir);
}

TEST_CASE("vocabulary files replace the default tokens") {
    TempDir t("vocab");
    write(t.path / "pos.txt", "photograph\nhigh detail\n8k\n");
    const auto cfg = parse_experiment_config(R"({"positive_vocabulary_file": "pos.txt"})", t.path);
    CHECK(std::get<TokenSubset>(cfg.space.param(4).kind).vocabulary ==
          std::vector<std::string>{"photograph", "high detail", "8k"});
    CHECK(std::get<TokenSubset>(cfg.space.param(5).kind).vocabulary == default_negative_vocabulary());
}

TEST_CASE("run: byte-identical archives across executions and parallelism") {
    TempDir t("determinism");
    std::ostringstream log;
    auto a = small_config(t.path / "a");
    auto b = small_config(t.path / "b");
    b.parallelism = 4;
    const auto sa = cmd_run(a, log);
    const auto sb = cmd_run(b, log);
    REQUIRE(sa.archives.size() == 2);
    CHECK(sa.all_complete);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(sa.archives[i].filename() == archive_file_name(i));
        CHECK(slurp(sa.archives[i]) == slurp(sb.archives[i]));
    }
    CHECK(slurp(sa.archives[0]) != slurp(sa.archives[1]));
    const auto manifest = nlohmann::json::parse(slurp(sa.manifest));
    CHECK(manifest["runs"].size() == 2);
    CHECK(manifest["runs"][0].contains("started_at"));
    CHECK(manifest["runs"][1]["seed"].get<std::uint64_t>() == run_seed(11, 1));
}

TEST_CASE("run through an external stub matches the built-in surrogate") {
    TempDir t("external");
    std::ostringstream log;
    auto internal = small_config(t.path / "internal");
    auto external = small_config(t.path / "external");
    external.evaluator.kind = EvaluatorSpec::Kind::external;
    external.evaluator.command = {STUB_BACKEND, "surrogate"};
    cmd_run(internal, log);
    const auto s = cmd_run(external, log);
    CHECK(s.all_complete);
    const auto x = read_archive_file(t.path / "internal" / archive_file_name(0));
    const auto y = read_archive_file(t.path / "external" / archive_file_name(0));
    REQUIRE(x.records.size() == y.records.size());
    for (std::size_t i = 0; i < x.records.size(); ++i) {
        CHECK(x.records[i].candidate == y.records[i].candidate);
        CHECK(x.records[i].quality == y.records[i].quality);
    }
}

TEST_CASE("the backend environment variable selects an external evaluator") {
    auto cfg = parse_experiment_config("{}");
    ::setenv(kBackendEnv, "python adapter.py --gpu 1", 1);
    apply_backend_env(cfg);
    ::unsetenv(kBackendEnv);
    CHECK(cfg.evaluator.kind == EvaluatorSpec::Kind::external);
    CHECK(cfg.evaluator.command == std::vector<std::string>{"python", "adapter.py", "--gpu", "1"});
}

TEST_CASE("compare and importance write their reports") {
    TempDir t("reports");
    std::ostringstream log;
    auto a = small_config(t.path / "pareto");
    auto b = small_config(t.path / "quality");
    b.nsga.mode = Mode::weighted_single;
    b.nsga.weights = {1.0, 0.0};
    cmd_run(a, log);
    cmd_run(b, log);

    std::ostringstream out;
    CompareOptions co{a.output_dir, b.output_dir, std::nullopt, t.path / "cmp"};
    const auto rep = cmd_compare(co, out);
    CHECK(rep.a.label == "pareto");
    CHECK(rep.b.label == "quality");
    for (const char* f : {"comparison.json", "comparison.tsv", "comparison.txt"}) CHECK(fs::exists(t.path / "cmp" / f));
    CHECK(nlohmann::json::parse(slurp(t.path / "cmp" / "comparison.json"))["schema"] == "pareto-tuner/comparison");

    ImportanceCliOptions io;
    io.in_dir = a.output_dir;
    io.target = Target::quality;
    io.analysis.repeats = 2;
    io.analysis.search_budget = 1;
    io.out_dir = t.path / "imp";
    cmd_importance(io, out);
    for (const char* f : {"importance-quality.tsv", "importance-quality-groups.tsv", "importance-quality.txt"})
        CHECK(fs::exists(t.path / "imp" / f));
}

TEST_CASE("binary exit codes") {
    TempDir t("binary");
    CHECK(run_binary("") == exit_usage);
    CHECK(run_binary("frobnicate") == exit_usage);
    CHECK(run_binary("--help") == exit_ok);
    CHECK(run_binary("run --config /nonexistent/config.json") == exit_config);
    write(t.path / "bad.json", R"({"population_size": 0})");
    CHECK(run_binary("run --config " + (t.path / "bad.json").string()) == exit_config);
    CHECK(run_binary("compare --a /nonexistent/a --b /nonexistent/b") == exit_data);
    CHECK(run_binary("importance --in /nonexistent --target time") == exit_data);
    CHECK(run_binary("importance --in " + t.path.string() + " --target speed") == exit_data);

    write(t.path / "ext.json", R"({"repeats": 1, "evaluator": {"kind": "external", "command": "/nonexistent/backend"}})");
    CHECK(run_binary("run --config " + (t.path / "ext.json").string() + " --out " + (t.path / "o").string()) ==
          exit_evaluator);

    write(t.path / "tiny.json", R"({"population_size": 6, "generations": 2, "repeats": 1})");
    CHECK(run_binary("run --config " + (t.path / "tiny.json").string() + " --out " + (t.path / "runs").string()) ==
          exit_ok);
    CHECK(fs::exists(t.path / "runs" / "run-000.archive"));
    CHECK(fs::exists(t.path / "runs" / "manifest.json"));

    write(t.path / "blocker", "a file where a directory should go");
    CHECK(run_binary("run --config " + (t.path / "tiny.json").string() + " --out " + (t.path / "blocker").string()) ==
          exit_io);

    const std::string dump = (t.path / "space.json").string();
    CHECK(std::system((std::string(PARETO_TUNER_BIN) + " space dump > " + dump).c_str()) == 0);
    CHECK(space_from_json(slurp(dump)) == SearchSpace::default_space());
}
