#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "ptuner/nsga2.hpp"

namespace ptuner {

/// Archive files are tab-separated, one line per entry:
///
///   # pareto-tuner archive 1
///   H  <run header JSON: config, base_prompt, evaluator_id, hv_ref>
///   S  <search space JSON, one line>
///   R  <generation> <genes> <time_ms> <quality> <evaluator_id>    (one per evaluation)
///   F  <genes> <time_ms> <quality>                                (one per final-front member)
///   E  complete | incomplete <message>
///
/// Reals are written with 17 significant digits. Wall-clock time is not
/// stored, so re-running an experiment reproduces the file byte for byte.
class ArchiveError : public std::runtime_error {
public:
    ArchiveError(const std::string& file, std::size_t line, const std::string& what);
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kArchiveMagic = "# pareto-tuner archive 1";

void write_archive(std::ostream& out, const RunArchive& archive);
/// Writes to a sibling temp file and renames it into place.
void write_archive_file(const std::filesystem::path& path, const RunArchive& archive);

/// `name` is only used in error messages.
RunArchive read_archive(std::istream& in, const std::string& name = "<stream>");
RunArchive read_archive_file(const std::filesystem::path& path);

/// Every *.archive file in `dir`, in file-name order.
std::vector<RunArchive> read_archive_dir(const std::filesystem::path& dir);

std::string format_double(double v);

} // namespace ptuner
