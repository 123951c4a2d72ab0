#include "ptuner/protocol.hpp"

#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>
#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <thread>
#include <unistd.h>

#include "json.hpp"

namespace ptuner {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(ProtocolErrc e) {
    switch (e) {
    case ProtocolErrc::spawn_failed: return "spawn failed";
    case ProtocolErrc::handshake_timeout: return "handshake timeout";
    case ProtocolErrc::malformed_handshake: return "malformed handshake";
    case ProtocolErrc::version_mismatch: return "version mismatch";
    case ProtocolErrc::malformed_response: return "malformed response";
    case ProtocolErrc::id_mismatch: return "id mismatch";
    case ProtocolErrc::timeout: return "request timeout";
    case ProtocolErrc::child_exited: return "backend exited";
    case ProtocolErrc::dead_handle: return "dead handle";
    case ProtocolErrc::io_error: return "i/o error";
    }
    return "unknown";
}

namespace {

std::string dump_line(const ordered_json& j) {
    try {
        return j.dump(-1, ' ', false, json::error_handler_t::strict);
    } catch (const json::exception& e) {
        throw ProtocolError(ProtocolErrc::io_error, std::string("cannot encode message: ") + e.what());
    }
}

json parse_object(std::string_view line, ProtocolErrc code) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw ProtocolError(code, e.what());
    }
    if (!j.is_object()) throw ProtocolError(code, "expected a JSON object");
    return j;
}

template <class T>
T field(const json& j, const char* name, ProtocolErrc code) {
    const auto it = j.find(name);
    if (it == j.end()) throw ProtocolError(code, std::string("missing field '") + name + "'");
    if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ProtocolError(code, std::string("field '") + name + "' must be a string");
    } else if constexpr (std::is_same_v<T, std::int64_t>) {
        if (!it->is_number_integer()) throw ProtocolError(code, std::string("field '") + name + "' must be an integer");
    } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw ProtocolError(code, std::string("field '") + name + "' must be a number");
    } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ProtocolError(code, std::string("field '") + name + "' must be a boolean");
    }
    return it->get<T>();
}

} // namespace

std::string serialize_request(const WireRequest& r) {
    ordered_json j;
    j["id"] = r.id;
    j["steps"] = r.steps;
    j["guidance_scale"] = r.guidance_scale;
    j["guidance_rescale"] = r.guidance_rescale;
    j["seed"] = r.seed;
    j["positive_prompt"] = r.positive_prompt;
    j["negative_prompt"] = r.negative_prompt;
    j["base_prompt"] = r.base_prompt;
    return dump_line(j);
}

WireRequest parse_request(std::string_view line) {
    constexpr auto bad = ProtocolErrc::malformed_response;
    const json j = parse_object(line, bad);
    WireRequest r;
    r.id = field<std::string>(j, "id", bad);
    r.steps = field<std::int64_t>(j, "steps", bad);
    r.guidance_scale = field<double>(j, "guidance_scale", bad);
    r.guidance_rescale = field<double>(j, "guidance_rescale", bad);
    r.seed = field<std::int64_t>(j, "seed", bad);
    r.positive_prompt = field<std::string>(j, "positive_prompt", bad);
    r.negative_prompt = field<std::string>(j, "negative_prompt", bad);
    r.base_prompt = field<std::string>(j, "base_prompt", bad);
    return r;
}

std::string serialize_response(const WireResponse& r) {
    ordered_json j;
    j["id"] = r.id;
    if (r.error) {
        j["error"] = *r.error;
    } else {
        j["time_ms"] = r.time_ms.value_or(0.0);
        j["quality"] = r.quality.value_or(0.0);
    }
    return dump_line(j);
}

WireResponse parse_response(std::string_view line) {
    constexpr auto bad = ProtocolErrc::malformed_response;
    const json j = parse_object(line, bad);
    WireResponse r;
    r.id = field<std::string>(j, "id", bad);
    const bool has_error = j.contains("error");
    const bool has_time = j.contains("time_ms");
    const bool has_quality = j.contains("quality");
    if (has_error) {
        if (has_time || has_quality) throw ProtocolError(bad, "response carries both an error and objectives");
        r.error = field<std::string>(j, "error", bad);
        return r;
    }
    if (!has_time || !has_quality) throw ProtocolError(bad, "response needs time_ms and quality, or error");
    const double t = field<double>(j, "time_ms", bad);
    const double q = field<double>(j, "quality", bad);
    if (!std::isfinite(t) || t < 0.0) throw ProtocolError(bad, "time_ms must be finite and >= 0");
    if (!(q >= 0.0 && q <= 1.0)) throw ProtocolError(bad, "quality must be in [0,1]");
    r.time_ms = t;
    r.quality = q;
    return r;
}

std::string serialize_handshake(const Handshake& h) {
    ordered_json j;
    j["protocol"] = kProtocolName;
    j["version"] = h.version;
    j["parallel_safe"] = h.parallel_safe;
    return dump_line(j);
}

Handshake parse_handshake(std::string_view line) {
    constexpr auto bad = ProtocolErrc::malformed_handshake;
    const json j = parse_object(line, bad);
    if (field<std::string>(j, "protocol", bad) != kProtocolName) throw ProtocolError(bad, "unknown protocol name");
    Handshake h;
    h.version = field<std::string>(j, "version", bad);
    h.parallel_safe = field<bool>(j, "parallel_safe", bad);
    return h;
}

// ---------------------------------------------------------------------------

BackendHandle::BackendHandle(BackendHandle&& o) noexcept
    : pid_(std::exchange(o.pid_, -1)), to_child_(std::exchange(o.to_child_, -1)),
      from_child_(std::exchange(o.from_child_, -1)), alive_(std::exchange(o.alive_, false)),
      request_timeout_(o.request_timeout_), handshake_(std::move(o.handshake_)), buffer_(std::move(o.buffer_)) {}

BackendHandle& BackendHandle::operator=(BackendHandle&& o) noexcept {
    if (this != &o) {
        shutdown();
        pid_ = std::exchange(o.pid_, -1);
        to_child_ = std::exchange(o.to_child_, -1);
        from_child_ = std::exchange(o.from_child_, -1);
        alive_ = std::exchange(o.alive_, false);
        request_timeout_ = o.request_timeout_;
        handshake_ = std::move(o.handshake_);
        buffer_ = std::move(o.buffer_);
    }
    return *this;
}

BackendHandle::~BackendHandle() { shutdown(); }

void BackendHandle::shutdown() noexcept {
    alive_ = false;
    if (to_child_ >= 0) {
        ::close(to_child_);
        to_child_ = -1;
    }
    if (from_child_ >= 0) {
        ::close(from_child_);
        from_child_ = -1;
    }
    if (pid_ > 0) {
        // Closing stdin asks the child to exit; give it a moment, then kill.
        int status = 0;
        for (int i = 0; i < 20; ++i) {
            if (::waitpid(pid_, &status, WNOHANG) != 0) {
                pid_ = -1;
                return;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
    }
}

void BackendHandle::fail(ProtocolErrc code, const std::string& what) {
    shutdown();
    throw ProtocolError(code, what);
}

std::string BackendHandle::read_line(std::chrono::milliseconds timeout, ProtocolErrc on_timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
        if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            return line;
        }
        const auto left =
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) fail(on_timeout, "no reply within " + std::to_string(timeout.count()) + " ms");
        pollfd p{from_child_, POLLIN, 0};
        const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
        if (rc < 0) {
            if (errno == EINTR) continue;
            fail(ProtocolErrc::io_error, std::strerror(errno));
        }
        if (rc == 0) continue;
        char buf[4096];
        const ssize_t n = ::read(from_child_, buf, sizeof buf);
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN) continue;
            fail(ProtocolErrc::io_error, std::strerror(errno));
        }
        if (n == 0) fail(ProtocolErrc::child_exited, "backend closed its output");
        buffer_.append(buf, static_cast<std::size_t>(n));
    }
}

void BackendHandle::write_line(const std::string& line) {
    std::string data = line + '\n';
    std::size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = ::write(to_child_, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            if (errno == EPIPE) fail(ProtocolErrc::child_exited, "backend closed its input");
            fail(ProtocolErrc::io_error, std::strerror(errno));
        }
        off += static_cast<std::size_t>(n);
    }
}

WireResponse BackendHandle::roundtrip(const WireRequest& req) {
    if (!alive_) throw ProtocolError(ProtocolErrc::dead_handle, "handle is no longer usable");
    const std::string line = serialize_request(req);
    write_line(line);
    const std::string reply = read_line(request_timeout_, ProtocolErrc::timeout);
    WireResponse resp;
    try {
        resp = parse_response(reply);
    } catch (const ProtocolError& e) {
        fail(e.code(), e.what());
    }
    if (resp.id != req.id) fail(ProtocolErrc::id_mismatch, "expected id '" + req.id + "', got '" + resp.id + "'");
    return resp;
}

BackendHandle spawn_backend(const std::vector<std::string>& command, std::chrono::milliseconds handshake_timeout,
                            std::chrono::milliseconds request_timeout) {
    if (command.empty()) throw ProtocolError(ProtocolErrc::spawn_failed, "empty command");
    static std::once_flag sigpipe_once;
    std::call_once(sigpipe_once, [] { std::signal(SIGPIPE, SIG_IGN); });

    int in_pipe[2], out_pipe[2], err_pipe[2];
    if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw ProtocolError(ProtocolErrc::spawn_failed, std::strerror(errno));
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        throw ProtocolError(ProtocolErrc::spawn_failed, std::strerror(errno));
    }
    if (::pipe2(err_pipe, O_CLOEXEC) != 0) {
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
        throw ProtocolError(ProtocolErrc::spawn_failed, std::strerror(errno));
    }

    std::vector<char*> argv;
    for (const auto& a : command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);

    const pid_t pid = ::fork();
    if (pid < 0) {
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]}) ::close(fd);
        throw ProtocolError(ProtocolErrc::spawn_failed, std::strerror(errno));
    }
    if (pid == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::execvp(argv[0], argv.data());
        const int err = errno;
        [[maybe_unused]] auto ignored = ::write(err_pipe[1], &err, sizeof err);
        ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);

    BackendHandle h;
    h.pid_ = pid;
    h.to_child_ = in_pipe[1];
    h.from_child_ = out_pipe[0];
    h.request_timeout_ = request_timeout;

    // exec either succeeds (closing the CLOEXEC pipe, read returns 0) or
    // reports errno.
    int exec_errno = 0;
    ssize_t n;
    do {
        n = ::read(err_pipe[0], &exec_errno, sizeof exec_errno);
    } while (n < 0 && errno == EINTR);
    ::close(err_pipe[0]);
    if (n > 0) h.fail(ProtocolErrc::spawn_failed, command[0] + ": " + std::strerror(exec_errno));

    h.alive_ = true;
    const std::string line = h.read_line(handshake_timeout, ProtocolErrc::handshake_timeout);
    try {
        h.handshake_ = parse_handshake(line);
    } catch (const ProtocolError& e) {
        h.fail(e.code(), e.what());
    }
    if (h.handshake_.version != kProtocolVersion)
        h.fail(ProtocolErrc::version_mismatch,
               "backend speaks version '" + h.handshake_.version + "', expected '" + kProtocolVersion + "'");
    return h;
}

std::vector<std::string> split_command(std::string_view command) {
    std::vector<std::string> out;
    std::string cur;
    bool in_quotes = false, have = false;
    for (char c : command) {
        if (c == '"') {
            in_quotes = !in_quotes;
            have = true;
        } else if (!in_quotes && (c == ' ' || c == '\t' || c == '\n')) {
            if (have) out.push_back(std::move(cur));
            cur.clear();
            have = false;
        } else {
            cur += c;
            have = true;
        }
    }
    if (have) out.push_back(std::move(cur));
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t require_param(const SearchSpace& space, const char* name) {
    const std::size_t i = space.find(name);
    if (i == space.size()) throw SpaceError(std::string("external backend needs a '") + name + "' param");
    return i;
}

double as_real(const GeneValue& g) {
    if (const auto* d = std::get_if<double>(&g)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(&g)) return static_cast<double>(*i);
    throw SpaceError("expected a numeric gene");
}

std::int64_t as_int(const GeneValue& g) {
    if (const auto* i = std::get_if<std::int64_t>(&g)) return *i;
    throw SpaceError("expected an integer gene");
}

} // namespace

ExternalBackend::ExternalBackend(std::vector<std::string> command, SearchSpace space,
                                 std::chrono::milliseconds handshake_timeout,
                                 std::chrono::milliseconds request_timeout)
    : command_(std::move(command)), space_(std::move(space)), handshake_timeout_(handshake_timeout),
      request_timeout_(request_timeout), steps_idx_(require_param(space_, "inference_steps")),
      scale_idx_(require_param(space_, "guidance_scale")), rescale_idx_(require_param(space_, "guidance_rescale")),
      seed_idx_(require_param(space_, "seed")) {
    if (command_.empty()) throw ProtocolError(ProtocolErrc::spawn_failed, "empty backend command");
}

std::string ExternalBackend::id() const {
    std::string s = "external:";
    for (std::size_t i = 0; i < command_.size(); ++i) {
        if (i) s += ' ';
        s += command_[i];
    }
    return s;
}

WireRequest ExternalBackend::to_wire(const EvalRequest& req) const {
    const auto& c = req.candidate;
    WireRequest w;
    w.id = req.id;
    w.steps = as_int(c.gene(steps_idx_));
    w.guidance_scale = as_real(c.gene(scale_idx_));
    w.guidance_rescale = as_real(c.gene(rescale_idx_));
    w.seed = as_int(c.gene(seed_idx_));
    w.positive_prompt = req.prompt.positive;
    w.negative_prompt = req.prompt.negative;
    w.base_prompt = req.base_prompt;
    return w;
}

void ExternalBackend::probe() { ensure_probed(); }

void ExternalBackend::ensure_probed() const {
    std::call_once(probed_, [this] {
        auto h = std::make_unique<BackendHandle>(spawn_backend(command_, handshake_timeout_, request_timeout_));
        std::lock_guard lock(mu_);
        parallel_safe_ = h->handshake().parallel_safe;
        ++spawned_;
        idle_.push_back(std::move(h));
    });
}

bool ExternalBackend::parallel_safe() const {
    // A failed probe is reported by the evaluations themselves.
    try {
        ensure_probed();
    } catch (const ProtocolError&) {
    }
    std::lock_guard lock(mu_);
    return parallel_safe_;
}

std::size_t ExternalBackend::spawned() const {
    std::lock_guard lock(mu_);
    return spawned_;
}

EvalResult ExternalBackend::evaluate(const EvalRequest& req) {
    const WireRequest wire = to_wire(req);
    std::unique_lock<std::mutex> serial;
    if (!parallel_safe()) serial = std::unique_lock(serial_mu_);
    std::unique_ptr<BackendHandle> h;
    {
        std::lock_guard lock(mu_);
        if (!idle_.empty()) {
            h = std::move(idle_.back());
            idle_.pop_back();
        }
    }
    if (!h) {
        h = std::make_unique<BackendHandle>(spawn_backend(command_, handshake_timeout_, request_timeout_));
        std::lock_guard lock(mu_);
        ++spawned_;
    }
    // A ProtocolError leaves the handle dead; it is dropped here and the
    // caller's retry gets a fresh process.
    const WireResponse resp = h->roundtrip(wire);
    {
        std::lock_guard lock(mu_);
        idle_.push_back(std::move(h));
    }
    if (resp.error) return EvalResult::failure(req.id, *resp.error);
    return EvalResult::success(req.id, *resp.time_ms, *resp.quality);
}

} // namespace ptuner
