// Protocol v1 test double. The first argument picks the behaviour:
//   echo               fixed time_ms 1000, quality 0.5
//   surrogate          answers with the built-in surrogate (noise seed 0)
//   wrong-id           replies with a different id
//   malformed          replies with a line that is not JSON
//   missing-fields     replies with an object lacking time_ms and error
//   error              replies with an error message
//   error-once         errors the first time it sees an id, then answers like echo
//   crash              exits without replying to the first request
//   slow <ms>          sleeps before each reply
//   sleep-handshake <ms>  sleeps before the handshake
//   bad-version        announces protocol version "2"
//   bad-handshake      prints a non-JSON handshake
//   no-handshake       exits immediately
//   serial             like echo but announces parallel_safe false
// Every request line is also appended to $STUB_LOG when set.
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <thread>

#include "json.hpp"
#include "ptuner/protocol.hpp"
#include "ptuner/surrogate.hpp"

using nlohmann::ordered_json;

namespace {

void sleep_ms(long ms) { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); }

void reply(const ptuner::WireResponse& r) { std::cout << ptuner::serialize_response(r) << '\n' << std::flush; }

ptuner::WireResponse surrogate_answer(const ptuner::WireRequest& req) {
    static ptuner::SurrogateBackend backend{ptuner::SurrogateConfig{}};
    const auto space = ptuner::SearchSpace::default_space();
    auto mask_of = [](const std::vector<std::string>& vocab, const std::string& text) {
        ptuner::TokenMask m(vocab.size(), false);
        std::set<std::string> parts;
        for (std::size_t pos = 0; pos <= text.size();) {
            const auto next = std::min(text.find(", ", pos), text.size());
            parts.insert(text.substr(pos, next - pos));
            pos = next + 2;
        }
        for (std::size_t i = 0; i < vocab.size(); ++i) m[i] = parts.count(vocab[i]) > 0;
        return m;
    };
    ptuner::Candidate c({ptuner::GeneValue{req.steps}, ptuner::GeneValue{req.guidance_scale},
                         ptuner::GeneValue{req.guidance_rescale}, ptuner::GeneValue{req.seed},
                         ptuner::GeneValue{mask_of(ptuner::default_positive_vocabulary(), req.positive_prompt)},
                         ptuner::GeneValue{mask_of(ptuner::default_negative_vocabulary(), req.negative_prompt)}});
    ptuner::EvalRequest er{req.id, c, req.base_prompt, ptuner::render_prompt(c, req.base_prompt, space)};
    const auto res = backend.evaluate(er);
    ptuner::WireResponse out{req.id, {}, {}, {}};
    if (res.ok()) {
        out.time_ms = res.time_ms;
        out.quality = res.quality;
    } else {
        out.error = *res.error;
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    const std::string mode = argc > 1 ? argv[1] : "echo";
    const long arg = argc > 2 ? std::atol(argv[2]) : 0;

    if (mode == "no-handshake") return 3;
    if (mode == "sleep-handshake") sleep_ms(arg);
    if (mode == "bad-handshake") {
        std::cout << "hello there\n" << std::flush;
    } else {
        ptuner::Handshake h{mode == "bad-version" ? "2" : ptuner::kProtocolVersion, mode != "serial"};
        std::cout << ptuner::serialize_handshake(h) << '\n' << std::flush;
    }

    const char* log_path = std::getenv("STUB_LOG");
    std::set<std::string> seen;
    std::string line;
    while (std::getline(std::cin, line)) {
        if (log_path) {
            std::ofstream log(log_path, std::ios::app);
            log << line << '\n';
        }
        ptuner::WireRequest req;
        try {
            req = ptuner::parse_request(line);
        } catch (const std::exception& e) {
            reply({"", {}, {}, std::string("bad request: ") + e.what()});
            continue;
        }
        if (mode == "crash") return 4;
        if (mode == "slow") sleep_ms(arg);
        if (mode == "wrong-id") {
            reply({req.id + "-other", 1000.0, 0.5, {}});
        } else if (mode == "malformed") {
            std::cout << "{not json\n" << std::flush;
        } else if (mode == "missing-fields") {
            std::cout << ordered_json{{"id", req.id}}.dump() << '\n' << std::flush;
        } else if (mode == "error") {
            reply({req.id, {}, {}, "generation failed"});
        } else if (mode == "error-once" && seen.insert(req.id).second) {
            reply({req.id, {}, {}, "transient failure"});
        } else if (mode == "surrogate") {
            reply(surrogate_answer(req));
        } else {
            reply({req.id, 1000.0, 0.5, {}});
        }
    }
    return 0;
}
