#include "ptuner/archive.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ptuner {

using nlohmann::ordered_json;

ArchiveError::ArchiveError(const std::string& file, std::size_t line, const std::string& what)
    : std::runtime_error(file + ":" + std::to_string(line) + ": " + what) {}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

ordered_json header_json(const RunArchive& a) {
    ordered_json cfg;
    cfg["population_size"] = a.config.population_size;
    cfg["generations"] = a.config.generations;
    cfg["mutation_rate"] = a.config.mutation_rate;
    cfg["crossover_rate"] = a.config.crossover_rate;
    cfg["weights"] = {{"quality", a.config.weights.w_quality}, {"time", a.config.weights.w_time}};
    cfg["mode"] = to_string(a.config.mode);
    cfg["master_seed"] = a.config.master_seed;
    ordered_json h;
    h["config"] = std::move(cfg);
    h["base_prompt"] = a.base_prompt;
    h["evaluator_id"] = a.evaluator_id;
    h["hv_ref"] = {{"quality_loss", a.hv_ref.quality_loss_ref}, {"time_ms", a.hv_ref.time_ref}};
    return h;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const auto end = line.find('\t', pos);
        out.push_back(line.substr(pos, end == std::string::npos ? std::string::npos : end - pos));
        if (end == std::string::npos) break;
        pos = end + 1;
    }
    return out;
}

std::string one_line(const std::string& s) {
    std::string out = s;
    std::replace(out.begin(), out.end(), '\n', ' ');
    std::replace(out.begin(), out.end(), '\t', ' ');
    return out;
}

} // namespace

void write_archive(std::ostream& out, const RunArchive& a) {
    out << kArchiveMagic << '\n';
    out << "H\t" << header_json(a).dump() << '\n';
    out << "S\t" << ordered_json::parse(space_to_json(a.space)).dump() << '\n';
    for (const auto& r : a.records) {
        out << "R\t" << r.generation << '\t' << serialize(r.candidate) << '\t' << format_double(r.time_ms) << '\t'
            << format_double(r.quality) << '\t' << one_line(r.evaluator_id) << '\n';
    }
    for (const auto& ind : a.final_front) {
        out << "F\t" << serialize(ind.candidate) << '\t' << format_double(ind.objectives.time_ms) << '\t'
            << format_double(ind.objectives.quality) << '\n';
    }
    if (a.complete) {
        out << "E\tcomplete\n";
    } else {
        out << "E\tincomplete\t" << one_line(a.failure) << '\n';
    }
}

void write_archive_file(const std::filesystem::path& path, const RunArchive& archive) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ArchiveError("cannot write " + tmp);
        write_archive(out, archive);
        if (!out) throw ArchiveError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

namespace {

double parse_real(const std::string& s, const std::string& name, std::size_t line) {
    char* stop = nullptr;
    const double v = std::strtod(s.c_str(), &stop);
    if (s.empty() || *stop != '\0') throw ArchiveError(name, line, "malformed number '" + s + "'");
    return v;
}

} // namespace

RunArchive read_archive(std::istream& in, const std::string& name) {
    RunArchive a;
    std::string line;
    std::size_t lineno = 0;
    bool have_header = false, have_space = false, have_end = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1) {
            if (line != kArchiveMagic) throw ArchiveError(name, lineno, "not a pareto-tuner archive (bad magic line)");
            continue;
        }
        if (line.empty()) continue;
        if (have_end) throw ArchiveError(name, lineno, "content after end marker");
        const auto f = split_tabs(line);
        try {
            if (f[0] == "H") {
                if (f.size() != 2) throw ArchiveError(name, lineno, "malformed header line");
                const auto h = nlohmann::json::parse(f[1]);
                const auto& c = h.at("config");
                a.config.population_size = c.at("population_size").get<std::size_t>();
                a.config.generations = c.at("generations").get<std::size_t>();
                a.config.mutation_rate = c.at("mutation_rate").get<double>();
                a.config.crossover_rate = c.at("crossover_rate").get<double>();
                a.config.weights.w_quality = c.at("weights").at("quality").get<double>();
                a.config.weights.w_time = c.at("weights").at("time").get<double>();
                a.config.mode = mode_from_string(c.at("mode").get<std::string>());
                a.config.master_seed = c.at("master_seed").get<std::uint64_t>();
                a.base_prompt = h.at("base_prompt").get<std::string>();
                a.evaluator_id = h.at("evaluator_id").get<std::string>();
                a.hv_ref.quality_loss_ref = h.at("hv_ref").at("quality_loss").get<double>();
                a.hv_ref.time_ref = h.at("hv_ref").at("time_ms").get<double>();
                have_header = true;
            } else if (f[0] == "S") {
                if (f.size() != 2) throw ArchiveError(name, lineno, "malformed space line");
                a.space = space_from_json(f[1]);
                have_space = true;
            } else if (f[0] == "R") {
                if (!have_header || !have_space) throw ArchiveError(name, lineno, "record before header");
                if (f.size() != 6) throw ArchiveError(name, lineno, "record needs 6 fields");
                EvaluationRecord r;
                char* stop = nullptr;
                r.generation = std::strtoll(f[1].c_str(), &stop, 10);
                if (f[1].empty() || *stop != '\0') throw ArchiveError(name, lineno, "malformed generation");
                r.candidate = deserialize(f[2], a.space);
                r.time_ms = parse_real(f[3], name, lineno);
                r.quality = parse_real(f[4], name, lineno);
                r.evaluator_id = f[5];
                a.records.push_back(std::move(r));
            } else if (f[0] == "F") {
                if (!have_header || !have_space) throw ArchiveError(name, lineno, "front entry before header");
                if (f.size() != 4) throw ArchiveError(name, lineno, "front entry needs 4 fields");
                Individual ind;
                ind.candidate = deserialize(f[1], a.space);
                ind.objectives = {parse_real(f[2], name, lineno), parse_real(f[3], name, lineno)};
                a.final_front.push_back(std::move(ind));
            } else if (f[0] == "E") {
                if (f.size() >= 2 && f[1] == "complete") {
                    a.complete = true;
                } else if (f.size() >= 2 && f[1] == "incomplete") {
                    a.complete = false;
                    a.failure = f.size() >= 3 ? f[2] : "";
                } else {
                    throw ArchiveError(name, lineno, "malformed end marker");
                }
                have_end = true;
            } else {
                throw ArchiveError(name, lineno, "unknown line tag '" + f[0] + "'");
            }
        } catch (const ArchiveError&) {
            throw;
        } catch (const std::exception& e) {
            throw ArchiveError(name, lineno, e.what());
        }
    }
    if (lineno == 0) throw ArchiveError(name, 0, "empty file");
    if (!have_header || !have_space) throw ArchiveError(name, lineno, "missing header");
    if (!have_end) throw ArchiveError(name, lineno, "truncated archive (no end marker)");
    return a;
}

RunArchive read_archive_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError("cannot open archive " + path.string());
    return read_archive(in, path.string());
}

std::vector<RunArchive> read_archive_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw ArchiveError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".archive") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<RunArchive> out;
    out.reserve(files.size());
    for (const auto& f : files) out.push_back(read_archive_file(f));
    return out;
}

} // namespace ptuner
