#include "kgic/backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <unordered_map>

#include "json.hpp"

#include "strings.hpp"

namespace kgic {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

constexpr auto kRetryPause = std::chrono::milliseconds(20);

std::string dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

json parse_reply(const std::string& line) {
    json reply;
    try {
        reply = json::parse(line);
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("backend reply is not JSON (") + e.what() + ")", line);
    }
    if (!reply.is_object() || !reply.contains("ok") || !reply["ok"].is_boolean())
        throw ProtocolError("backend reply lacks a boolean 'ok'", line);
    if (!reply["ok"].get<bool>()) {
        const auto code = reply.value("error", json()).is_string() ? reply["error"].get<std::string>() : "";
        if (code != "bad_request" && code != "model_error" && code != "unsupported")
            throw ProtocolError("backend reply carries an unknown error code", line);
        const auto message = reply.value("message", json()).is_string() ? reply["message"].get<std::string>() : "";
        throw BackendError(code, message);
    }
    return reply;
}

std::vector<std::string> string_list(const json& reply, const char* key, const std::string& raw) {
    if (!reply.contains(key) || !reply[key].is_array()) throw ProtocolError(std::string("hello reply lacks '") + key + "'", raw);
    std::vector<std::string> out;
    for (const auto& v : reply[key]) {
        if (!v.is_string()) throw ProtocolError(std::string("non-string entry in '") + key + "'", raw);
        out.push_back(v.get<std::string>());
    }
    return out;
}

}  // namespace

// ---- Configuration ---------------------------------------------------------

void BackendConfig::validate() const {
    if (!(timeout_seconds > 0) || !std::isfinite(timeout_seconds))
        throw Error("backend timeout must be a positive number of seconds");
    if (max_retries < 0) throw Error("backend max retries must be >= 0");
    if (transport == TransportKind::subprocess && (command.empty() || command[0].empty()))
        throw Error("subprocess backend needs a command");
    if (transport == TransportKind::tcp && (host.empty() || port == 0))
        throw Error("tcp backend needs host and a nonzero port");
}

BackendConfig parse_backend_spec(std::string_view spec, BackendConfig base) {
    const auto colon = spec.find(':');
    if (colon == std::string_view::npos) throw Error("backend spec must start with 'stdio:' or 'tcp:': " + std::string(spec));
    const auto kind = spec.substr(0, colon);
    const auto rest = spec.substr(colon + 1);
    if (kind == "stdio" || kind == "subprocess") {
        base.transport = TransportKind::subprocess;
        base.command.clear();
        for (auto& part : str::split(rest, ' '))
            if (!part.empty()) base.command.push_back(std::string(part));
    } else if (kind == "tcp") {
        const auto last = rest.rfind(':');
        if (last == std::string_view::npos) throw Error("tcp backend spec must be tcp:<host>:<port>");
        base.transport = TransportKind::tcp;
        base.host = std::string(rest.substr(0, last));
        const auto port_text = std::string(rest.substr(last + 1));
        char* end = nullptr;
        const long port = std::strtol(port_text.c_str(), &end, 10);
        if (port_text.empty() || *end != '\0' || port <= 0 || port > 65535)
            throw Error("invalid tcp backend port: " + port_text);
        base.port = static_cast<std::uint16_t>(port);
    } else {
        throw Error("unknown backend transport '" + std::string(kind) + "'");
    }
    base.validate();
    return base;
}

std::string backend_spec(const BackendConfig& config) {
    if (config.transport == TransportKind::tcp) return "tcp:" + config.host + ":" + std::to_string(config.port);
    return "stdio:" + str::join(config.command, " ");
}

BackendConfig apply_backend_env(BackendConfig config) {
    const char* env = std::getenv(kBackendEnv);
    if (env == nullptr || *env == '\0') return config;
    return parse_backend_spec(env, std::move(config));
}

// ---- Client ----------------------------------------------------------------

BackendClient::BackendClient(BackendConfig config)
    : config_(std::move(config)), transport_(make_transport(config_)) {}

BackendClient::~BackendClient() {
    try {
        shutdown();
    } catch (...) {
    }
}

std::string BackendClient::exchange(const std::string& request_line) { return call(request_line); }

std::string BackendClient::call(const std::string& request_line) {
    std::lock_guard lock(mutex_);
    return attempt_locked(request_line);
}

std::string BackendClient::attempt_locked(const std::string& request_line) {
    const int attempts = config_.max_retries + 1;
    const auto budget = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(config_.timeout_seconds));
    std::string last_error;
    bool timed_out = false;
    for (int i = 0; i < attempts; ++i) {
        const auto deadline = Clock::now() + budget;
        try {
            if (!connected_ && pinned_) {
                // Fresh connection: confirm the server still speaks the same vocabulary.
                if (hello_locked(deadline) != *pinned_)
                    throw ProtocolError("backend vocabulary or relations changed after reconnecting", "");
            }
            connected_ = true;
            return transport_->round_trip(request_line, deadline);
        } catch (const TransportError& e) {
            transport_->reset();
            connected_ = false;
            last_error = e.what();
            timed_out = dynamic_cast<const TimeoutError*>(&e) != nullptr;
            if (i + 1 < attempts) {
                ++reconnects_;
                std::this_thread::sleep_for(kRetryPause);
            }
        }
    }
    const std::string msg = "backend request failed after " + std::to_string(attempts) + " attempt(s): " + last_error;
    if (timed_out) throw TimeoutError(msg);
    throw TransportError(msg);
}

Handshake BackendClient::hello_locked(Clock::time_point deadline) {
    const auto raw = transport_->round_trip(dump(json{{"op", "hello"}}), deadline);
    const auto reply = parse_reply(raw);
    Handshake h{string_list(reply, "vocab", raw), string_list(reply, "relations", raw)};
    return h;
}

const Handshake& BackendClient::handshake() {
    std::lock_guard lock(mutex_);
    if (pinned_) return *pinned_;
    const auto raw = attempt_locked(dump(json{{"op", "hello"}}));
    const auto reply = parse_reply(raw);
    Handshake h{string_list(reply, "vocab", raw), string_list(reply, "relations", raw)};
    if (h.vocab.empty()) throw ProtocolError("hello reply has an empty vocabulary", raw);
    pinned_ = std::move(h);
    return *pinned_;
}

std::vector<double> BackendClient::next_log_probs(std::string_view prompt, std::span<const std::string> prefix) {
    const auto& vocab = handshake().vocab;
    std::unordered_map<std::string_view, std::size_t> position;
    for (std::size_t i = 0; i < vocab.size(); ++i) position.emplace(vocab[i], i);

    json request{{"op", "next_log_probs"}, {"prompt", std::string(prompt)}, {"prefix", json::array()}};
    for (const auto& t : prefix) request["prefix"].push_back(t);
    const auto raw = call(dump(request));
    const auto reply = parse_reply(raw);
    if (!reply.contains("log_probs") || !reply["log_probs"].is_object())
        throw ProtocolError("next_log_probs reply lacks a 'log_probs' object", raw);
    const auto& lp = reply["log_probs"];
    if (lp.size() != vocab.size())
        throw ProtocolError("next_log_probs reply has " + std::to_string(lp.size()) + " entries, vocabulary has " +
                                std::to_string(vocab.size()),
                            raw);
    std::vector<double> out(vocab.size(), 0.0);
    std::vector<bool> seen(vocab.size(), false);
    for (const auto& [token, value] : lp.items()) {
        auto it = position.find(token);
        if (it == position.end()) throw ProtocolError("next_log_probs reply names unknown token '" + token + "'", raw);
        if (!value.is_number()) throw ProtocolError("non-numeric log-prob for token '" + token + "'", raw);
        out[it->second] = value.get<double>();
        seen[it->second] = true;
    }
    for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i]) throw ProtocolError("next_log_probs reply misses token '" + vocab[i] + "'", raw);
    try {
        check_normalized(out, vocab.size(), kRemoteNormTolerance);
    } catch (const Error& e) {
        throw ProtocolError(e.what(), raw);
    }
    return out;
}

std::map<std::string, double> BackendClient::property_scores(std::string_view text) {
    const auto& relations = handshake().relations;
    const auto raw = call(dump(json{{"op", "property_scores"}, {"text", std::string(text)}}));
    const auto reply = parse_reply(raw);
    if (!reply.contains("scores") || !reply["scores"].is_object())
        throw ProtocolError("property_scores reply lacks a 'scores' object", raw);
    std::map<std::string, double> out;
    for (const auto& [label, value] : reply["scores"].items()) {
        if (!value.is_number()) throw ProtocolError("non-numeric score for relation '" + label + "'", raw);
        const double v = value.get<double>();
        if (!(v >= 0.0 && v <= 1.0))
            throw ProtocolError("score for relation '" + label + "' outside [0, 1]", raw);
        out.emplace(label, v);
    }
    for (const auto& [label, v] : out)
        if (std::find(relations.begin(), relations.end(), label) == relations.end())
            throw ProtocolError("property_scores reply names unknown relation '" + label + "'", raw);
    if (out.size() != relations.size())
        throw ProtocolError("property_scores reply has " + std::to_string(out.size()) + " scores, handshake lists " +
                                std::to_string(relations.size()) + " relations",
                            raw);
    return out;
}

void BackendClient::shutdown() {
    std::lock_guard lock(mutex_);
    if (!connected_) return;
    connected_ = false;
    const auto budget = std::chrono::duration<double>(std::min(config_.timeout_seconds, 1.0));
    try {
        transport_->round_trip(dump(json{{"op", "shutdown"}}),
                               Clock::now() + std::chrono::duration_cast<Clock::duration>(budget));
    } catch (const TransportError&) {
    }
    transport_->reset();
}

// ---- Remote scorers --------------------------------------------------------

namespace {
Tokenizer handshake_tokenizer(BackendClient& client) {
    try {
        return Tokenizer(client.handshake().vocab);
    } catch (const ProtocolError&) {
        throw;
    } catch (const Error& e) {
        throw ProtocolError(std::string("backend vocabulary unusable: ") + e.what(), "");
    }
}
}  // namespace

RemoteTokenScorer::RemoteTokenScorer(std::shared_ptr<BackendClient> client)
    : client_(std::move(client)), tokenizer_(handshake_tokenizer(*client_)) {}

std::vector<double> RemoteTokenScorer::next_log_probs(std::string_view prompt, std::span<const TokenId> prefix) {
    std::vector<std::string> tokens;
    tokens.reserve(prefix.size());
    for (const auto t : prefix) tokens.push_back(tokenizer_.token(t));
    return client_->next_log_probs(prompt, tokens);
}

std::unique_ptr<RemoteTokenScorer> remote_token_scorer(const BackendConfig& config) {
    return std::make_unique<RemoteTokenScorer>(std::make_shared<BackendClient>(config));
}

RemotePropertyScorer::RemotePropertyScorer(std::shared_ptr<BackendClient> client, const KnowledgeGraph& graph,
                                           std::uint64_t train_fingerprint, TextMask mask)
    : client_(std::move(client)), graph_(graph), fingerprint_(train_fingerprint), mask_(mask) {
    const auto& relations = client_->handshake().relations;
    for (const auto& label : graph.relations().labels())
        if (std::find(relations.begin(), relations.end(), label) == relations.end())
            throw ProtocolError("backend does not know relation '" + label + "'", "");
}

PropertyScores RemotePropertyScorer::scores(EntityId entity) {
    const auto by_label = client_->property_scores(render_entity_text(graph_, entity, mask_));
    PropertyScores out(graph_.num_relations(), 0.0);
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = by_label.at(graph_.relation_label(relation_at(r)));
    return out;
}

std::unique_ptr<RemotePropertyScorer> remote_property_scorer(const BackendConfig& config,
                                                             const KnowledgeGraph& graph,
                                                             std::uint64_t train_fingerprint, TextMask mask) {
    return std::make_unique<RemotePropertyScorer>(std::make_shared<BackendClient>(config), graph, train_fingerprint,
                                                  mask);
}

}  // namespace kgic
