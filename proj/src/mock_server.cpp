#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "kgic/backend.hpp"

namespace kgic {

using nlohmann::json;

namespace {

std::string dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

std::string error_reply(const std::string& code, const std::string& message) {
    return dump(json{{"ok", false}, {"error", code}, {"message", message}});
}

std::map<std::string, double> number_map(const json& j, const std::string& what) {
    if (!j.is_object()) throw Error("mock table: '" + what + "' must be an object");
    std::map<std::string, double> out;
    for (const auto& [k, v] : j.items()) {
        if (!v.is_number()) throw Error("mock table: non-numeric value for '" + k + "' in '" + what + "'");
        out.emplace(k, v.get<double>());
    }
    return out;
}

std::vector<std::string> strings(const json& j, const std::string& what) {
    if (!j.is_array()) throw Error("mock table: '" + what + "' must be an array");
    std::vector<std::string> out;
    for (const auto& v : j) {
        if (!v.is_string()) throw Error("mock table: '" + what + "' must hold strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

}  // namespace

MockServerTable parse_mock_table(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(std::string("mock table is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error("mock table must be a JSON object");
    MockServerTable t;
    t.vocab = strings(j.value("vocab", json::array()), "vocab");
    t.relations = strings(j.value("relations", json::array()), "relations");
    if (t.vocab.empty()) throw Error("mock table: empty vocab");
    const json distributions = j.value("distributions", json::array());
    if (!distributions.is_array()) throw Error("mock table: 'distributions' must be an array");
    for (const auto& d : distributions) {
        if (!d.is_object()) throw Error("mock table: distribution entries must be objects");
        MockServerTable::Entry e;
        if (d.contains("prompt")) {
            if (!d["prompt"].is_string()) throw Error("mock table: 'prompt' must be a string");
            e.prompt = d["prompt"].get<std::string>();
        }
        e.prefix = strings(d.value("prefix", json::array()), "prefix");
        e.log_probs = number_map(d.value("log_probs", json::object()), "log_probs");
        t.distributions.push_back(std::move(e));
    }
    const json property_scores = j.value("property_scores", json::object());
    if (!property_scores.is_object()) throw Error("mock table: 'property_scores' must be an object");
    for (const auto& [text, scores] : property_scores.items())
        t.property_scores.emplace(text, number_map(scores, "property_scores"));
    if (j.contains("default_property_scores"))
        t.default_property_scores = number_map(j["default_property_scores"], "default_property_scores");
    t.delays = number_map(j.value("delays", json::object()), "delays");
    return t;
}

MockServerTable load_mock_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open mock table " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return parse_mock_table(text.str());
}

MockServer::MockServer(MockServerTable table) : table_(std::move(table)) {}

MockServer::Reply MockServer::handle(std::string_view request_line) const {
    json req;
    try {
        req = json::parse(request_line);
    } catch (const json::exception&) {
        return {error_reply("bad_request", "request is not valid JSON"), 0, false};
    }
    if (!req.is_object() || !req.contains("op") || !req["op"].is_string())
        return {error_reply("bad_request", "request needs a string 'op'"), 0, false};
    const auto op = req["op"].get<std::string>();
    double delay = 0;
    if (auto it = table_.delays.find(op); it != table_.delays.end()) delay = it->second;

    if (op == "hello") return {dump(json{{"ok", true}, {"vocab", table_.vocab}, {"relations", table_.relations}}), delay, false};
    if (op == "shutdown") return {dump(json{{"ok", true}}), delay, true};

    if (op == "next_log_probs") {
        if (!req.contains("prompt") || !req["prompt"].is_string())
            return {error_reply("bad_request", "next_log_probs needs a string 'prompt'"), delay, false};
        if (!req.contains("prefix") || !req["prefix"].is_array())
            return {error_reply("bad_request", "next_log_probs needs an array 'prefix'"), delay, false};
        std::vector<std::string> prefix;
        for (const auto& t : req["prefix"]) {
            if (!t.is_string()) return {error_reply("bad_request", "prefix entries must be strings"), delay, false};
            const auto tok = t.get<std::string>();
            if (std::find(table_.vocab.begin(), table_.vocab.end(), tok) == table_.vocab.end())
                return {error_reply("bad_request", "unknown token '" + tok + "' in prefix"), delay, false};
            prefix.push_back(tok);
        }
        const auto prompt = req["prompt"].get<std::string>();
        const MockServerTable::Entry* match = nullptr;
        for (const auto& e : table_.distributions)
            if (e.prefix == prefix && e.prompt && *e.prompt == prompt) match = &e;
        if (match == nullptr)
            for (const auto& e : table_.distributions)
                if (e.prefix == prefix && !e.prompt) match = &e;
        json lp = json::object();
        if (match != nullptr) {
            for (const auto& [tok, v] : match->log_probs) lp[tok] = v;
        } else {
            const double u = -std::log(static_cast<double>(table_.vocab.size()));
            for (const auto& tok : table_.vocab) lp[tok] = u;
        }
        return {dump(json{{"ok", true}, {"log_probs", lp}}), delay, false};
    }

    if (op == "property_scores") {
        if (!req.contains("text") || !req["text"].is_string())
            return {error_reply("bad_request", "property_scores needs a string 'text'"), delay, false};
        const auto text = req["text"].get<std::string>();
        const std::map<std::string, double>* scores = nullptr;
        if (auto it = table_.property_scores.find(text); it != table_.property_scores.end()) scores = &it->second;
        else if (table_.default_property_scores) scores = &*table_.default_property_scores;
        if (scores == nullptr) return {error_reply("model_error", "no scores for this entity"), delay, false};
        return {dump(json{{"ok", true}, {"scores", *scores}}), delay, false};
    }

    return {error_reply("unsupported", "unknown op '" + op + "'"), delay, false};
}

void serve_stream(const MockServer& server, std::istream& in, std::ostream& out) {
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto reply = server.handle(line);
        if (reply.delay_seconds > 0) std::this_thread::sleep_for(std::chrono::duration<double>(reply.delay_seconds));
        out << reply.line << '\n' << std::flush;
        if (reply.shutdown) break;
    }
}

TcpMockServer::TcpMockServer(const MockServer& server, std::uint16_t port) : server_(server) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd_ < 0) throw Error(std::string("mock server socket: ") + std::strerror(errno));
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 8) != 0) {
        const std::string err = std::strerror(errno);
        ::close(listen_fd_);
        throw Error("mock server cannot listen on port " + std::to_string(port) + ": " + err);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

TcpMockServer::~TcpMockServer() {
    if (listen_fd_ >= 0) ::close(listen_fd_);
}

void TcpMockServer::run() {
    while (!stopping_) {
        pollfd p{listen_fd_, POLLIN, 0};
        if (::poll(&p, 1, 50) <= 0) continue;
        const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
        if (fd < 0) continue;
        serve_connection(fd);
        ::close(fd);
    }
}

void TcpMockServer::serve_connection(int fd) {
    std::string buffer;
    while (!stopping_) {
        pollfd p{fd, POLLIN, 0};
        const int rc = ::poll(&p, 1, 50);
        if (rc == 0) continue;
        if (rc < 0 && errno == EINTR) continue;
        char chunk[4096];
        const ssize_t n = rc < 0 ? -1 : ::read(fd, chunk, sizeof chunk);
        if (n <= 0) return;
        buffer.append(chunk, static_cast<std::size_t>(n));
        std::size_t nl;
        while ((nl = buffer.find('\n')) != std::string::npos) {
            std::string line = buffer.substr(0, nl);
            buffer.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const auto reply = server_.handle(line);
            // Sleep in slices so stop() is honoured during long delays.
            const auto until = std::chrono::steady_clock::now() + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                                     std::chrono::duration<double>(reply.delay_seconds));
            while (!stopping_ && std::chrono::steady_clock::now() < until)
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            if (stopping_) return;
            const std::string data = reply.line + '\n';
            std::size_t off = 0;
            while (off < data.size()) {
                const ssize_t w = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
                if (w <= 0) return;
                off += static_cast<std::size_t>(w);
            }
            if (reply.shutdown) {
                stopping_ = true;
                return;
            }
        }
    }
}

}  // namespace kgic
