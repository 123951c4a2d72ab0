#include "ptuner/cli.hpp"

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ptuner/archive.hpp"
#include "ptuner/protocol.hpp"

namespace ptuner::cli {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
        if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
    }
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

SurrogateConfig parse_surrogate(const json& j) {
    reject_unknown(j,
                   {"noise_seed", "time_base_ms", "time_per_step_ms", "time_jitter", "quality_base", "steps_amplitude",
                    "steps_scale", "rescale_amplitude", "rescale_peak", "scale_amplitude", "scale_peak", "scale_width",
                    "positive_token_bonus", "positive_bonus_cap", "negative_token_bonus", "negative_bonus_cap",
                    "noise_sigma"},
                   "evaluator.surrogate");
    SurrogateConfig s;
    read_opt(j, "noise_seed", s.noise_seed);
    read_opt(j, "time_base_ms", s.time_base_ms);
    read_opt(j, "time_per_step_ms", s.time_per_step_ms);
    read_opt(j, "time_jitter", s.time_jitter);
    read_opt(j, "quality_base", s.quality_base);
    read_opt(j, "steps_amplitude", s.steps_amplitude);
    read_opt(j, "steps_scale", s.steps_scale);
    read_opt(j, "rescale_amplitude", s.rescale_amplitude);
    read_opt(j, "rescale_peak", s.rescale_peak);
    read_opt(j, "scale_amplitude", s.scale_amplitude);
    read_opt(j, "scale_peak", s.scale_peak);
    read_opt(j, "scale_width", s.scale_width);
    read_opt(j, "positive_token_bonus", s.positive_token_bonus);
    read_opt(j, "positive_bonus_cap", s.positive_bonus_cap);
    read_opt(j, "negative_token_bonus", s.negative_token_bonus);
    read_opt(j, "negative_bonus_cap", s.negative_bonus_cap);
    read_opt(j, "noise_sigma", s.noise_sigma);
    return s;
}

std::string iso_time(std::chrono::system_clock::time_point t) {
    const std::time_t tt = std::chrono::system_clock::to_time_t(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw OutputError("cannot write " + tmp);
        out << text;
        if (!out) throw OutputError("write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw OutputError("cannot rename " + tmp + ": " + ec.message());
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw OutputError("cannot create output directory " + dir.string());
}

} // namespace

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig cfg;
    try {
        reject_unknown(j,
                       {"schema", "version", "base_prompt", "mode", "weights", "population_size", "generations",
                        "mutation_rate", "crossover_rate", "repeats", "master_seed", "evaluator", "parallelism",
                        "retries", "cache_dir", "hv_ref", "space_file", "positive_vocabulary_file",
                        "negative_vocabulary_file", "output_dir"},
                       "config");
        read_opt(j, "base_prompt", cfg.base_prompt);
        if (j.contains("mode")) cfg.nsga.mode = mode_from_string(j["mode"].get<std::string>());
        if (j.contains("weights")) {
            reject_unknown(j["weights"], {"quality", "time"}, "weights");
            read_opt(j["weights"], "quality", cfg.nsga.weights.w_quality);
            read_opt(j["weights"], "time", cfg.nsga.weights.w_time);
        }
        read_opt(j, "population_size", cfg.nsga.population_size);
        read_opt(j, "generations", cfg.nsga.generations);
        read_opt(j, "mutation_rate", cfg.nsga.mutation_rate);
        read_opt(j, "crossover_rate", cfg.nsga.crossover_rate);
        read_opt(j, "repeats", cfg.repeats);
        read_opt(j, "master_seed", cfg.nsga.master_seed);
        read_opt(j, "parallelism", cfg.parallelism);
        read_opt(j, "retries", cfg.retries);
        if (j.contains("cache_dir") && !j["cache_dir"].is_null())
            cfg.cache_dir = resolve(base_dir, j["cache_dir"].get<std::string>());
        if (j.contains("output_dir")) cfg.output_dir = resolve(base_dir, j["output_dir"].get<std::string>());
        if (j.contains("hv_ref")) {
            reject_unknown(j["hv_ref"], {"quality_loss", "time_ms"}, "hv_ref");
            read_opt(j["hv_ref"], "quality_loss", cfg.hv_ref.quality_loss_ref);
            read_opt(j["hv_ref"], "time_ms", cfg.hv_ref.time_ref);
        }
        if (j.contains("evaluator")) {
            const auto& e = j["evaluator"];
            reject_unknown(e, {"kind", "command", "handshake_timeout_ms", "request_timeout_ms", "surrogate"},
                           "evaluator");
            const std::string kind = e.value("kind", std::string("surrogate"));
            if (kind == "surrogate") {
                cfg.evaluator.kind = EvaluatorSpec::Kind::surrogate;
            } else if (kind == "external") {
                cfg.evaluator.kind = EvaluatorSpec::Kind::external;
            } else {
                throw ConfigError("evaluator.kind must be 'surrogate' or 'external'");
            }
            if (e.contains("command")) {
                cfg.evaluator.command = e["command"].is_string() ? split_command(e["command"].get<std::string>())
                                                                 : e["command"].get<std::vector<std::string>>();
            }
            if (e.contains("handshake_timeout_ms"))
                cfg.evaluator.handshake_timeout = std::chrono::milliseconds(e["handshake_timeout_ms"].get<std::int64_t>());
            if (e.contains("request_timeout_ms"))
                cfg.evaluator.request_timeout = std::chrono::milliseconds(e["request_timeout_ms"].get<std::int64_t>());
            if (e.contains("surrogate")) cfg.evaluator.surrogate = parse_surrogate(e["surrogate"]);
        }
        if (j.contains("space_file") && !j["space_file"].is_null()) {
            cfg.space = load_space(resolve(base_dir, j["space_file"].get<std::string>()));
        } else if (j.contains("positive_vocabulary_file") || j.contains("negative_vocabulary_file")) {
            auto pos = default_positive_vocabulary();
            auto neg = default_negative_vocabulary();
            if (j.contains("positive_vocabulary_file"))
                pos = load_vocabulary(resolve(base_dir, j["positive_vocabulary_file"].get<std::string>()));
            if (j.contains("negative_vocabulary_file"))
                neg = load_vocabulary(resolve(base_dir, j["negative_vocabulary_file"].get<std::string>()));
            cfg.space = SearchSpace::default_space(std::move(pos), std::move(neg));
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }

    try {
        cfg.nsga.validate();
        cfg.evaluator.surrogate.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (cfg.repeats < 1) throw ConfigError("repeats must be >= 1");
    if (cfg.parallelism < 1) throw ConfigError("parallelism must be >= 1");
    if (cfg.evaluator.kind == EvaluatorSpec::Kind::external && cfg.evaluator.command.empty())
        throw ConfigError("external evaluator needs a command");
    if (!(cfg.hv_ref.quality_loss_ref > 0.0) || !(cfg.hv_ref.time_ref > 0.0))
        throw ConfigError("hv_ref coordinates must be positive");
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_experiment_config(ss.str(), path.parent_path().empty() ? "." : path.parent_path());
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["schema"] = "pareto-tuner/config";
    j["version"] = 1;
    j["base_prompt"] = cfg.base_prompt;
    j["mode"] = to_string(cfg.nsga.mode);
    j["weights"] = {{"quality", cfg.nsga.weights.w_quality}, {"time", cfg.nsga.weights.w_time}};
    j["population_size"] = cfg.nsga.population_size;
    j["generations"] = cfg.nsga.generations;
    j["mutation_rate"] = cfg.nsga.mutation_rate;
    j["crossover_rate"] = cfg.nsga.crossover_rate;
    j["repeats"] = cfg.repeats;
    j["master_seed"] = cfg.nsga.master_seed;
    ordered_json e;
    if (cfg.evaluator.kind == EvaluatorSpec::Kind::surrogate) {
        const auto& s = cfg.evaluator.surrogate;
        e["kind"] = "surrogate";
        e["surrogate"] = {{"noise_seed", s.noise_seed},
                          {"time_base_ms", s.time_base_ms},
                          {"time_per_step_ms", s.time_per_step_ms},
                          {"time_jitter", s.time_jitter},
                          {"quality_base", s.quality_base},
                          {"steps_amplitude", s.steps_amplitude},
                          {"steps_scale", s.steps_scale},
                          {"rescale_amplitude", s.rescale_amplitude},
                          {"rescale_peak", s.rescale_peak},
                          {"scale_amplitude", s.scale_amplitude},
                          {"scale_peak", s.scale_peak},
                          {"scale_width", s.scale_width},
                          {"positive_token_bonus", s.positive_token_bonus},
                          {"positive_bonus_cap", s.positive_bonus_cap},
                          {"negative_token_bonus", s.negative_token_bonus},
                          {"negative_bonus_cap", s.negative_bonus_cap},
                          {"noise_sigma", s.noise_sigma}};
    } else {
        e["kind"] = "external";
        e["command"] = cfg.evaluator.command;
        e["handshake_timeout_ms"] = cfg.evaluator.handshake_timeout.count();
        e["request_timeout_ms"] = cfg.evaluator.request_timeout.count();
    }
    j["evaluator"] = std::move(e);
    j["parallelism"] = cfg.parallelism;
    j["retries"] = cfg.retries;
    j["cache_dir"] = cfg.cache_dir ? json(cfg.cache_dir->string()) : json(nullptr);
    j["hv_ref"] = {{"quality_loss", cfg.hv_ref.quality_loss_ref}, {"time_ms", cfg.hv_ref.time_ref}};
    j["output_dir"] = cfg.output_dir.string();
    return j.dump(2) + "\n";
}

std::uint64_t run_seed(std::uint64_t master_seed, std::size_t index) { return derive_seed(master_seed, index); }

std::string archive_file_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "run-%03zu.archive", index);
    return buf;
}

void apply_backend_env(ExperimentConfig& cfg) {
    const char* env = std::getenv(kBackendEnv);
    if (!env || !*env) return;
    cfg.evaluator.kind = EvaluatorSpec::Kind::external;
    cfg.evaluator.command = split_command(env);
}

RunSummary cmd_run(const ExperimentConfig& cfg, std::ostream& log) {
    ensure_dir(cfg.output_dir);

    std::shared_ptr<Backend> backend;
    if (cfg.evaluator.kind == EvaluatorSpec::Kind::surrogate) {
        backend = std::make_shared<SurrogateBackend>(cfg.evaluator.surrogate);
    } else {
        try {
            auto ext = std::make_shared<ExternalBackend>(cfg.evaluator.command, cfg.space,
                                                         cfg.evaluator.handshake_timeout, cfg.evaluator.request_timeout);
            ext->probe();
            backend = std::move(ext);
        } catch (const ProtocolError& e) {
            throw EvaluatorFailure(e.what());
        } catch (const SpaceError& e) {
            throw ConfigError(e.what());
        }
    }

    RunSummary summary;
    ordered_json runs = ordered_json::array();
    for (std::size_t i = 0; i < cfg.repeats; ++i) {
        NsgaConfig nsga = cfg.nsga;
        nsga.master_seed = run_seed(cfg.nsga.master_seed, i);
        Evaluator evaluator(backend, cfg.parallelism, cfg.retries, cfg.cache_dir);
        const auto started = std::chrono::system_clock::now();
        RunArchive archive = evolve(cfg.space, evaluator, nsga, {}, cfg.base_prompt);
        const auto finished = std::chrono::system_clock::now();
        archive.hv_ref = cfg.hv_ref;

        const auto path = cfg.output_dir / archive_file_name(i);
        try {
            write_archive_file(path, archive);
        } catch (const std::exception& e) {
            throw OutputError(e.what());
        }
        summary.archives.push_back(path);
        summary.all_complete = summary.all_complete && archive.complete;
        log << archive_file_name(i) << ": " << archive.records.size() << " evaluations, front of "
            << archive.final_front.size() << (archive.complete ? "" : " (INCOMPLETE: " + archive.failure + ")")
            << '\n';

        ordered_json r;
        r["file"] = archive_file_name(i);
        r["seed"] = nsga.master_seed;
        r["records"] = archive.records.size();
        r["complete"] = archive.complete;
        r["started_at"] = iso_time(started);
        r["finished_at"] = iso_time(finished);
        r["backend_calls"] = evaluator.stats().backend_calls;
        runs.push_back(std::move(r));
    }

    ordered_json manifest;
    manifest["schema"] = "pareto-tuner/manifest";
    manifest["version"] = 1;
    manifest["config"] = ordered_json::parse(experiment_config_to_json(cfg));
    manifest["runs"] = std::move(runs);
    summary.manifest = cfg.output_dir / "manifest.json";
    write_text_file(summary.manifest, manifest.dump(2) + "\n");
    return summary;
}

ComparisonReport cmd_compare(const CompareOptions& opts, std::ostream& out) {
    const auto a = read_archive_dir(opts.dir_a);
    const auto b = read_archive_dir(opts.dir_b);
    if (a.empty()) throw ArchiveError("no .archive files in " + opts.dir_a.string());
    if (b.empty()) throw ArchiveError("no .archive files in " + opts.dir_b.string());
    auto label = [](const std::filesystem::path& p) {
        const auto name = std::filesystem::weakly_canonical(p).filename().string();
        return name.empty() ? p.string() : name;
    };
    std::string la = label(opts.dir_a), lb = label(opts.dir_b);
    if (la == lb) {
        la += "(a)";
        lb += "(b)";
    }
    const ComparisonReport report = compare_runs(a, b, opts.ref, la, lb);
    ensure_dir(opts.out_dir);
    write_text_file(opts.out_dir / "comparison.json", report_summary_json(report));
    write_text_file(opts.out_dir / "comparison.tsv", report_table_tsv(report));
    const std::string text = "# pareto-tuner comparison-summary 1\n" + report_text(report);
    write_text_file(opts.out_dir / "comparison.txt", text);
    out << text;
    return report;
}

ImportanceReport cmd_importance(const ImportanceCliOptions& opts, std::ostream& out) {
    const auto archives = read_archive_dir(opts.in_dir);
    if (archives.empty()) throw ArchiveError("no .archive files in " + opts.in_dir.string());
    const ImportanceReport rep = importance_analysis(archives, opts.target, opts.analysis);
    ensure_dir(opts.out_dir);
    const std::string stem = "importance-" + to_string(opts.target);
    write_text_file(opts.out_dir / (stem + ".tsv"), importance_table_tsv(rep));
    write_text_file(opts.out_dir / (stem + "-groups.tsv"), importance_group_table_tsv(rep));
    const std::string chart = "# pareto-tuner importance-chart 1\n" + importance_bar_chart(rep);
    write_text_file(opts.out_dir / (stem + ".txt"), chart);
    out << chart;
    return rep;
}

int main_entry(int argc, char** argv) {
    CLI::App app{"Multi-objective tuner for text-to-image generation parameters and prompts"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run repeated NSGA-II optimizations");
    std::string config_path;
    std::optional<std::size_t> repeats;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    run->add_option("--config", config_path, "experiment config file (JSON)");
    run->add_option("--repeats", repeats, "number of independent runs");
    run->add_option("--seed", seed, "master seed");
    run->add_option("--out", out_dir, "output directory");

    auto* compare = app.add_subcommand("compare", "compare two sets of run archives");
    std::string dir_a, dir_b, compare_out;
    std::optional<double> ref_quality, ref_time;
    compare->add_option("--a", dir_a, "archives of approach A")->required();
    compare->add_option("--b", dir_b, "archives of approach B")->required();
    compare->add_option("--ref-quality", ref_quality, "hypervolume reference quality loss (default 1.0)");
    compare->add_option("--ref-time", ref_time, "hypervolume reference time in ms (default 50000)");
    compare->add_option("--out", compare_out, "report directory (default: current directory)");

    auto* importance = app.add_subcommand("importance", "random-forest MDI importance of parameters");
    std::string imp_in, imp_target = "time", imp_out;
    ImportanceOptions imp_opts;
    importance->add_option("--in", imp_in, "directory of run archives")->required();
    importance->add_option("--target", imp_target, "time or quality")->required();
    importance->add_option("--repeats", imp_opts.repeats, "analysis repeats (default 10)");
    importance->add_option("--budget", imp_opts.search_budget, "hyperparameter search budget (default 10)");
    importance->add_option("--seed", imp_opts.seed, "analysis seed (default 0)");
    importance->add_option("--threads", imp_opts.threads, "tree-fitting threads (default 1)");
    importance->add_option("--out", imp_out, "report directory (default: the input directory)");

    auto* space = app.add_subcommand("space", "search-space utilities");
    space->require_subcommand(1);
    auto* dump = space->add_subcommand("dump", "print the default search-space file");
    std::string pos_vocab, neg_vocab;
    dump->add_option("--positive-vocab", pos_vocab, "positive token file, one per line");
    dump->add_option("--negative-vocab", neg_vocab, "negative token file, one per line");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_usage;
    }

    try {
        if (*run) {
            ExperimentConfig cfg = config_path.empty() ? parse_experiment_config("{}") : load_experiment_config(config_path);
            if (repeats) cfg.repeats = *repeats;
            if (seed) cfg.nsga.master_seed = *seed;
            if (!out_dir.empty()) cfg.output_dir = out_dir;
            if (cfg.repeats < 1) throw ConfigError("repeats must be >= 1");
            apply_backend_env(cfg);
            const RunSummary s = cmd_run(cfg, std::cout);
            std::cout << "wrote " << s.archives.size() << " archives and " << s.manifest.string() << '\n';
            return s.all_complete ? exit_ok : exit_evaluator;
        }
        if (*compare) {
            CompareOptions o;
            o.dir_a = dir_a;
            o.dir_b = dir_b;
            o.out_dir = compare_out.empty() ? std::filesystem::path(".") : std::filesystem::path(compare_out);
            if (ref_quality || ref_time) {
                RefPoint r;
                if (ref_quality) r.quality_loss_ref = *ref_quality;
                if (ref_time) r.time_ref = *ref_time;
                o.ref = r;
            }
            cmd_compare(o, std::cout);
            return exit_ok;
        }
        if (*importance) {
            ImportanceCliOptions o;
            o.in_dir = imp_in;
            o.target = target_from_string(imp_target);
            o.analysis = imp_opts;
            o.out_dir = imp_out.empty() ? o.in_dir : std::filesystem::path(imp_out);
            cmd_importance(o, std::cout);
            return exit_ok;
        }
        if (*dump) {
            auto pos = pos_vocab.empty() ? default_positive_vocabulary() : load_vocabulary(pos_vocab);
            auto neg = neg_vocab.empty() ? default_negative_vocabulary() : load_vocabulary(neg_vocab);
            std::cout << space_to_json(SearchSpace::default_space(std::move(pos), std::move(neg)));
            return exit_ok;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const SpaceError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const EvaluatorFailure& e) {
        std::cerr << "evaluator failure: " << e.what() << '\n';
        return exit_evaluator;
    } catch (const OutputError& e) {
        std::cerr << "output error: " << e.what() << '\n';
        return exit_io;
    } catch (const ArchiveError& e) {
        std::cerr << "archive error: " << e.what() << '\n';
        return exit_data;
    } catch (const MetricsError& e) {
        std::cerr << "comparison error: " << e.what() << '\n';
        return exit_data;
    } catch (const ImportanceError& e) {
        std::cerr << "importance error: " << e.what() << '\n';
        return exit_data;
    }
    return exit_usage;
}

} // namespace ptuner::cli
