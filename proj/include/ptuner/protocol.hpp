#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ptuner/evaluation.hpp"

namespace ptuner {

/// Protocol v1 framing: one JSON object per line, UTF-8, '\n'-terminated.
/// See PROTOCOL.md for the exact schemas.
inline constexpr const char* kProtocolName = "pareto-tuner";
inline constexpr const char* kProtocolVersion = "1";

struct WireRequest {
    std::string id;
    std::int64_t steps = 0;
    double guidance_scale = 0.0;
    double guidance_rescale = 0.0;
    std::int64_t seed = 0;
    std::string positive_prompt;
    std::string negative_prompt;
    std::string base_prompt;

    bool operator==(const WireRequest&) const = default;
};

struct WireResponse {
    std::string id;
    std::optional<double> time_ms;
    std::optional<double> quality;
    std::optional<std::string> error;

    bool operator==(const WireResponse&) const = default;
};

struct Handshake {
    std::string version;
    bool parallel_safe = false;
};

enum class ProtocolErrc {
    spawn_failed,
    handshake_timeout,
    malformed_handshake,
    version_mismatch,
    malformed_response,
    id_mismatch,
    timeout,
    child_exited,
    dead_handle,
    io_error,
};

std::string to_string(ProtocolErrc e);

class ProtocolError : public std::runtime_error {
public:
    ProtocolError(ProtocolErrc code, const std::string& what)
        : std::runtime_error(to_string(code) + ": " + what), code_(code) {}
    [[nodiscard]] ProtocolErrc code() const noexcept { return code_; }

private:
    ProtocolErrc code_;
};

/// Serialized lines carry no trailing newline. Parsers throw
/// ProtocolError(malformed_response) on anything off-schema.
std::string serialize_request(const WireRequest& r);
WireRequest parse_request(std::string_view line);
std::string serialize_response(const WireResponse& r);
WireResponse parse_response(std::string_view line);
std::string serialize_handshake(const Handshake& h);
Handshake parse_handshake(std::string_view line);

/// A running backend process talking protocol v1 on its stdin/stdout.
/// Owned by one thread at a time. Once any call fails the handle is dead and
/// refuses further requests.
class BackendHandle {
public:
    BackendHandle(const BackendHandle&) = delete;
    BackendHandle& operator=(const BackendHandle&) = delete;
    BackendHandle(BackendHandle&& other) noexcept;
    BackendHandle& operator=(BackendHandle&& other) noexcept;
    ~BackendHandle();

    [[nodiscard]] bool alive() const noexcept { return alive_; }
    [[nodiscard]] const Handshake& handshake() const noexcept { return handshake_; }
    [[nodiscard]] int pid() const noexcept { return pid_; }

    WireResponse roundtrip(const WireRequest& req);

private:
    friend BackendHandle spawn_backend(const std::vector<std::string>&, std::chrono::milliseconds,
                                       std::chrono::milliseconds);
    BackendHandle() = default;

    std::string read_line(std::chrono::milliseconds timeout, ProtocolErrc on_timeout);
    void write_line(const std::string& line);
    [[noreturn]] void fail(ProtocolErrc code, const std::string& what);
    void shutdown() noexcept;

    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    bool alive_ = false;
    std::chrono::milliseconds request_timeout_{0};
    Handshake handshake_;
    std::string buffer_;
};

/// Starts `command` (argv[0] resolved via PATH) and waits for its handshake.
/// Distinct ProtocolErrc values for spawn failure, handshake timeout, a
/// malformed handshake and a version mismatch; on failure the child is killed
/// and reaped.
BackendHandle spawn_backend(const std::vector<std::string>& command, std::chrono::milliseconds handshake_timeout,
                            std::chrono::milliseconds request_timeout);

/// Splits a command string on whitespace; double quotes group words.
std::vector<std::string> split_command(std::string_view command);

/// Evaluation backend over a pool of backend processes, one request in
/// flight per process. Processes are spawned on demand. A first process is
/// started before any evaluation; if its handshake says parallel_safe false
/// the pool is limited to one process.
class ExternalBackend final : public Backend {
public:
    ExternalBackend(std::vector<std::string> command, SearchSpace space,
                    std::chrono::milliseconds handshake_timeout = std::chrono::seconds(120),
                    std::chrono::milliseconds request_timeout = std::chrono::seconds(300));

    [[nodiscard]] std::string id() const override;
    /// Probes first so the handshake answer is known.
    [[nodiscard]] bool parallel_safe() const override;
    EvalResult evaluate(const EvalRequest& req) override;

    /// Spawns one process eagerly so configuration errors surface early.
    void probe();
    [[nodiscard]] std::size_t spawned() const;

    WireRequest to_wire(const EvalRequest& req) const;

private:
    std::vector<std::string> command_;
    SearchSpace space_;
    std::chrono::milliseconds handshake_timeout_;
    std::chrono::milliseconds request_timeout_;
    std::size_t steps_idx_, scale_idx_, rescale_idx_, seed_idx_;

    void ensure_probed() const;

    mutable std::once_flag probed_;
    mutable std::mutex serial_mu_;
    mutable bool parallel_safe_ = true;
    mutable std::mutex mu_;
    mutable std::vector<std::unique_ptr<BackendHandle>> idle_;
    mutable std::size_t spawned_ = 0;
};

} // namespace ptuner
