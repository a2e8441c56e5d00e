#pragma once
// Client and mock server for the line-delimited JSON model protocol.
//
//   {"op":"hello"}                                  -> vocab, relations
//   {"op":"next_log_probs","prompt":..,"prefix":[..]} -> log_probs by token
//   {"op":"property_scores","text":..}              -> scores by relation
//   {"op":"shutdown"}
//
// Failures answer {"ok":false,"error":code,"message":..} with code one of
// bad_request, model_error, unsupported.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kgic/error.hpp"
#include "kgic/genlp.hpp"
#include "kgic/property.hpp"

namespace kgic {

// ---- Errors ----------------------------------------------------------------

// Malformed or contract-violating response. Carries the raw line.
class ProtocolError : public Error {
public:
    ProtocolError(const std::string& what, std::string payload)
        : Error(what + (payload.empty() ? "" : "; payload: " + payload)), payload_(std::move(payload)) {}
    const std::string& payload() const { return payload_; }

private:
    std::string payload_;
};

// Connection-level failure (spawn, connect, broken pipe). Retriable.
class TransportError : public Error {
public:
    using Error::Error;
};

class TimeoutError : public TransportError {
public:
    using TransportError::TransportError;
};

// Well-formed {"ok":false} answer from the server.
class BackendError : public Error {
public:
    BackendError(std::string code, const std::string& message)
        : Error("backend error " + code + ": " + message), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

// ---- Configuration ---------------------------------------------------------

enum class TransportKind { subprocess, tcp };

struct BackendConfig {
    TransportKind transport = TransportKind::subprocess;
    std::vector<std::string> command;  // subprocess argv
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
    double timeout_seconds = 30.0;  // per attempt
    int max_retries = 2;

    void validate() const;
};

// "stdio:<program> [args...]" or "tcp:<host>:<port>".
BackendConfig parse_backend_spec(std::string_view spec, BackendConfig base = {});
std::string backend_spec(const BackendConfig& config);

inline constexpr const char* kBackendEnv = "KGIC_BACKEND";

// Applies KGIC_BACKEND on top of `config` when the variable is set.
BackendConfig apply_backend_env(BackendConfig config);

// ---- Transport -------------------------------------------------------------

class Transport {
public:
    virtual ~Transport() = default;
    // Sends one line and waits for one reply line, both without '\n'.
    virtual std::string round_trip(const std::string& line, std::chrono::steady_clock::time_point deadline) = 0;
    // Drops the connection; the next round_trip reconnects.
    virtual void reset() = 0;
};

std::unique_ptr<Transport> make_transport(const BackendConfig& config);

// ---- Client ----------------------------------------------------------------

struct Handshake {
    std::vector<std::string> vocab;
    std::vector<std::string> relations;

    bool operator==(const Handshake&) const = default;
};

// One request stream. Calls are serialized by an internal mutex. Each attempt
// gets `timeout_seconds`; transport failures are retried up to `max_retries`
// times after reconnecting, so a call ends within timeout * (retries + 1)
// plus a small reconnect pause per retry.
class BackendClient {
public:
    explicit BackendClient(BackendConfig config);
    ~BackendClient();

    BackendClient(const BackendClient&) = delete;
    BackendClient& operator=(const BackendClient&) = delete;

    // Raw exchange: returns the reply line exactly as received.
    std::string exchange(const std::string& request_line);

    // Performs the handshake on first use; later handshakes after a reconnect
    // must match it exactly.
    const Handshake& handshake();

    std::vector<double> next_log_probs(std::string_view prompt, std::span<const std::string> prefix);
    std::map<std::string, double> property_scores(std::string_view text);
    void shutdown();

    const BackendConfig& config() const { return config_; }
    std::size_t reconnects() const { return reconnects_; }

private:
    std::string call(const std::string& request_line);
    std::string attempt_locked(const std::string& request_line);
    Handshake hello_locked(std::chrono::steady_clock::time_point deadline);

    BackendConfig config_;
    std::unique_ptr<Transport> transport_;
    std::optional<Handshake> pinned_;
    bool connected_ = false;
    std::size_t reconnects_ = 0;
    std::recursive_mutex mutex_;
};

inline constexpr double kRemoteNormTolerance = 1e-4;

class RemoteTokenScorer final : public TokenScorer {
public:
    explicit RemoteTokenScorer(std::shared_ptr<BackendClient> client);

    const Tokenizer& tokenizer() const override { return tokenizer_; }
    std::vector<double> next_log_probs(std::string_view prompt, std::span<const TokenId> prefix) override;
    double tolerance() const override { return kRemoteNormTolerance; }

private:
    std::shared_ptr<BackendClient> client_;
    Tokenizer tokenizer_;
};

std::unique_ptr<RemoteTokenScorer> remote_token_scorer(const BackendConfig& config);

// Scores come back keyed by relation label and are mapped onto the graph's
// relations. The server's relation list must cover every graph relation.
class RemotePropertyScorer final : public PropertyPredictor {
public:
    RemotePropertyScorer(std::shared_ptr<BackendClient> client, const KnowledgeGraph& graph,
                         std::uint64_t train_fingerprint, TextMask mask = {});

    PropertyScores scores(EntityId entity) override;
    std::string name() const override { return "remote"; }
    std::uint64_t train_fingerprint() const override { return fingerprint_; }

private:
    std::shared_ptr<BackendClient> client_;
    const KnowledgeGraph& graph_;
    std::uint64_t fingerprint_;
    TextMask mask_;
};

std::unique_ptr<RemotePropertyScorer> remote_property_scorer(const BackendConfig& config,
                                                             const KnowledgeGraph& graph,
                                                             std::uint64_t train_fingerprint, TextMask mask = {});

// ---- Mock server -----------------------------------------------------------

struct MockServerTable {
    struct Entry {
        std::optional<std::string> prompt;  // nullopt matches any prompt
        std::vector<std::string> prefix;
        std::map<std::string, double> log_probs;
    };

    std::vector<std::string> vocab;
    std::vector<std::string> relations;
    std::vector<Entry> distributions;  // unlisted contexts answer uniform
    std::map<std::string, std::map<std::string, double>> property_scores;  // by entity text
    std::optional<std::map<std::string, double>> default_property_scores;
    std::map<std::string, double> delays;  // op -> seconds before answering
};

// JSON layout documented in tests/fixtures/protocol/README.md.
MockServerTable parse_mock_table(std::string_view json_text);
MockServerTable load_mock_table(const std::string& path);

class MockServer {
public:
    struct Reply {
        std::string line;
        double delay_seconds = 0;
        bool shutdown = false;
    };

    explicit MockServer(MockServerTable table);
    Reply handle(std::string_view request_line) const;
    const MockServerTable& table() const { return table_; }

private:
    MockServerTable table_;
};

// Serves requests from `in` until EOF or shutdown.
void serve_stream(const MockServer& server, std::istream& in, std::ostream& out);

// Single-threaded TCP listener on 127.0.0.1. `port` 0 picks a free port.
class TcpMockServer {
public:
    TcpMockServer(const MockServer& server, std::uint16_t port = 0);
    ~TcpMockServer();

    TcpMockServer(const TcpMockServer&) = delete;
    TcpMockServer& operator=(const TcpMockServer&) = delete;

    std::uint16_t port() const { return port_; }
    // Accepts connections until stop() or a shutdown request.
    void run();
    void stop() { stopping_ = true; }

private:
    void serve_connection(int fd);

    const MockServer& server_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
};

}  // namespace kgic
