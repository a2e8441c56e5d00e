#include <chrono>
#include <cstdlib>
#include <thread>

#include "doctest.h"
#include "json.hpp"
#include "kgic/backend.hpp"
#include "kgic/pipeline.hpp"
#include "support.hpp"

using namespace kgic;
using nlohmann::json;

namespace {

struct Case {
    std::string request, response;
};

std::vector<Case> conformance_corpus() {
    std::vector<Case> out;
    std::istringstream in(test::read_file(test::fixture("protocol/conformance.jsonl")));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = json::parse(line);
        out.push_back({j.at("request").get<std::string>(), j.at("response").get<std::string>()});
    }
    return out;
}

BackendConfig stdio_mock(const std::string& table, double timeout = 10, int retries = 0) {
    BackendConfig c;
    c.command = {KGIC_MOCK_SERVER_PATH, "--table", table};
    c.timeout_seconds = timeout;
    c.max_retries = retries;
    return c;
}

// A /bin/sh server answering hello with `hello` and anything else with `other`.
BackendConfig scripted(const std::string& name, const std::string& hello, const std::string& other) {
    const auto dir = test::temp_dir("script_" + name);
    const auto path = dir / "server.sh";
    std::ofstream(path) << "while IFS= read -r line; do\n"
                           "  case \"$line\" in\n"
                           "    *'\"hello\"'*) printf '%s\\n' '" << hello << "' ;;\n"
                           "    *'\"shutdown\"'*) printf '%s\\n' '{\"ok\":true}'; exit 0 ;;\n"
                           "    *) printf '%s\\n' '" << other << "' ;;\n"
                           "  esac\n"
                           "done\n";
    BackendConfig c;
    c.command = {"/bin/sh", path.string()};
    c.timeout_seconds = 5;
    c.max_retries = 0;
    return c;
}

const std::string kHello = R"({"ok":true,"vocab":["</s>","a"],"relations":["p","q"]})";

struct TcpServerThread {
    MockServer server;
    TcpMockServer tcp;
    std::thread thread;

    explicit TcpServerThread(MockServerTable table) : server(std::move(table)), tcp(server) {
        thread = std::thread([this] { tcp.run(); });
    }
    ~TcpServerThread() {
        tcp.stop();
        thread.join();
    }
    BackendConfig config() const {
        BackendConfig c;
        c.transport = TransportKind::tcp;
        c.port = tcp.port();
        c.timeout_seconds = 5;
        return c;
    }
};

}  // namespace

TEST_SUITE("backend") {
    TEST_CASE("backend specs") {
        const auto s = parse_backend_spec("stdio:python3 server.py --model m");
        CHECK(s.transport == TransportKind::subprocess);
        CHECK(s.command == std::vector<std::string>{"python3", "server.py", "--model", "m"});
        CHECK(backend_spec(s) == "stdio:python3 server.py --model m");
        const auto t = parse_backend_spec("tcp:localhost:8123");
        CHECK(t.transport == TransportKind::tcp);
        CHECK(t.host == "localhost");
        CHECK(t.port == 8123);
        CHECK_THROWS(parse_backend_spec("tcp:localhost"));
        CHECK_THROWS(parse_backend_spec("tcp:h:99999"));
        CHECK_THROWS(parse_backend_spec("http://x"));
        CHECK_THROWS(parse_backend_spec("stdio:"));
        BackendConfig bad;
        bad.command = {"x"};
        bad.timeout_seconds = 0;
        CHECK_THROWS(bad.validate());

        ::setenv(kBackendEnv, "tcp:127.0.0.1:9", 1);
        CHECK(apply_backend_env(s).port == 9);
        ::unsetenv(kBackendEnv);
        CHECK(apply_backend_env(s).command == s.command);
    }

    TEST_CASE("mock table parsing") {
        const auto t = load_mock_table(test::fixture("protocol/mock_table.json").string());
        CHECK(t.vocab.size() == 4);
        CHECK(t.distributions.size() == 3);
        CHECK(t.default_property_scores.has_value());
        CHECK_THROWS(parse_mock_table("[]"));
        CHECK_THROWS(parse_mock_table(R"({"vocab":[]})"));
        CHECK_THROWS(parse_mock_table(R"({"vocab":["</s>"],"property_scores":[]})"));
    }

    TEST_CASE("in-process server answers the conformance corpus") {
        const MockServer server(load_mock_table(test::fixture("protocol/mock_table.json").string()));
        const auto corpus = conformance_corpus();
        REQUIRE(corpus.size() >= 15);
        for (const auto& c : corpus) CHECK(server.handle(c.request).line == c.response);
        std::ostringstream out;
        std::istringstream in(R"({"op":"hello"})"
                              "\n"
                              R"({"op":"shutdown"})"
                              "\n"
                              R"({"op":"hello"})"
                              "\n");
        serve_stream(server, in, out);
        const auto text = out.str();
        CHECK(std::count(text.begin(), text.end(), '\n') == 2);
    }

    TEST_CASE("subprocess loopback is byte exact") {
        BackendClient client(stdio_mock(test::fixture("protocol/mock_table.json").string()));
        for (const auto& c : conformance_corpus()) CHECK(client.exchange(c.request) == c.response);
    }

    TEST_CASE("tcp loopback is byte exact") {
        TcpServerThread srv(load_mock_table(test::fixture("protocol/mock_table.json").string()));
        BackendClient client(srv.config());
        for (const auto& c : conformance_corpus()) CHECK(client.exchange(c.request) == c.response);
    }

    TEST_CASE("typed client calls") {
        BackendClient client(stdio_mock(test::fixture("protocol/mock_table.json").string()));
        CHECK(client.handshake().vocab == std::vector<std::string>{"</s>", "a", "b", "c"});
        const std::vector<std::string> pre{"a"};
        const auto lp = client.next_log_probs("anything", pre);
        CHECK(lp[0] == doctest::Approx(std::log(0.6)));
        const auto s = client.property_scores("head: alice, types: person, description: A painter from Paris");
        CHECK(s.at("born_in") == 0.83);
        const std::vector<std::string> bad{"z"};
        try {
            client.next_log_probs("x", bad);
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            CHECK(e.code() == "bad_request");
        }

        RemoteTokenScorer scorer(std::make_shared<BackendClient>(
            stdio_mock(test::fixture("protocol/mock_table.json").string())));
        CHECK(scorer.tokenizer().size() == 4);
        CHECK(scorer.tolerance() == kRemoteNormTolerance);
        const auto out = beam_search(scorer, "anything", {2, 3});
        REQUIRE_FALSE(out.empty());
        CHECK(scorer.tokenizer().decode(out[0].tokens) == "a");
    }

    TEST_CASE("client validates replies") {
        const auto expect_protocol = [](const std::string& name, const std::string& other, auto&& call) {
            BackendClient client(scripted(name, kHello, other));
            try {
                call(client);
                FAIL("expected ProtocolError for " << name);
            } catch (const ProtocolError& e) {
                CHECK(e.payload() == other);
            }
        };
        const auto scores = [](BackendClient& c) { c.property_scores("t"); };
        const auto lps = [](BackendClient& c) { c.next_log_probs("t", {}); };
        expect_protocol("range", R"({"ok":true,"scores":{"p":1.3,"q":0.1}})", scores);
        expect_protocol("label", R"({"ok":true,"scores":{"p":0.3,"z":0.1}})", scores);
        expect_protocol("size", R"({"ok":true,"scores":{"p":0.3}})", scores);
        expect_protocol("nan", R"({"ok":true,"scores":{"p":"high","q":0.1}})", scores);
        expect_protocol("unnormalized", R"({"ok":true,"log_probs":{"</s>":-0.1,"a":-0.1}})", lps);
        expect_protocol("missing", R"({"ok":true,"log_probs":{"</s>":0}})", lps);
        expect_protocol("unknown", R"({"ok":true,"log_probs":{"</s>":0,"zz":-1e9}})", lps);
        expect_protocol("notjson", "this is not json", lps);
        expect_protocol("code", R"({"ok":false,"error":"teapot"})", lps);

        BackendClient ok(scripted("accept", kHello, R"({"ok":true,"scores":{"p":0.2,"q":1.0}})"));
        CHECK(ok.property_scores("t") == std::map<std::string, double>{{"p", 0.2}, {"q", 1.0}});

        BackendClient err(scripted("err", kHello, R"({"ok":false,"error":"model_error","message":"boom"})"));
        try {
            err.property_scores("t");
            FAIL("expected BackendError");
        } catch (const BackendError& e) {
            CHECK(e.code() == "model_error");
        }
    }

    TEST_CASE("remote property scorer needs every graph relation") {
        const auto g = test::load_fixture_graph("toy");
        CHECK_THROWS_AS(RemotePropertyScorer(std::make_shared<BackendClient>(scripted("rel", kHello, "{}")), g, 0),
                        ProtocolError);
    }

    TEST_CASE("vocabulary drift after reconnect is fatal") {
        const auto dir = test::temp_dir("drift");
        const auto marker = dir / "seen";
        const auto path = dir / "server.sh";
        std::ofstream(path) << "while IFS= read -r line; do\n"
                               "  case \"$line\" in\n"
                               "    *'\"hello\"'*) if [ -e '" << marker.string() << "' ]; then\n"
                               "        printf '%s\\n' '{\"ok\":true,\"vocab\":[\"</s>\",\"b\"],\"relations\":[]}'\n"
                               "      else touch '" << marker.string() << "'\n"
                               "        printf '%s\\n' '{\"ok\":true,\"vocab\":[\"</s>\",\"a\"],\"relations\":[]}'\n"
                               "      fi ;;\n"
                               "    *) exit 0 ;;\n"
                               "  esac\n"
                               "done\n";
        BackendConfig c;
        c.command = {"/bin/sh", path.string()};
        c.timeout_seconds = 5;
        c.max_retries = 2;
        BackendClient client(c);
        CHECK(client.handshake().vocab == std::vector<std::string>{"</s>", "a"});
        CHECK_THROWS_AS(client.next_log_probs("x", {}), ProtocolError);
        CHECK(client.reconnects() == 1);
    }

    TEST_CASE("timeouts end within timeout x (retries + 1)") {
        auto table = load_mock_table(test::fixture("protocol/mock_table.json").string());
        table.delays["next_log_probs"] = 30;
        const auto dir = test::temp_dir("timeout");
        json j;
        j["vocab"] = table.vocab;
        j["relations"] = table.relations;
        j["delays"] = table.delays;
        std::ofstream(dir / "table.json") << j.dump();

        BackendClient client(stdio_mock((dir / "table.json").string(), 0.3, 2));
        client.handshake();
        const auto t0 = std::chrono::steady_clock::now();
        CHECK_THROWS_AS(client.next_log_probs("x", {}), TimeoutError);
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        CHECK(elapsed >= 0.3 * 3);
        CHECK(elapsed < 0.3 * 3 + 1.0);
        CHECK(client.reconnects() == 2);
    }

    TEST_CASE("unreachable servers fail after retries") {
        std::uint16_t port = 0;
        {
            const MockServer s(load_mock_table(test::fixture("protocol/mock_table.json").string()));
            TcpMockServer probe(s);
            port = probe.port();
        }
        BackendConfig c;
        c.transport = TransportKind::tcp;
        c.port = port;
        c.timeout_seconds = 1;
        c.max_retries = 1;
        BackendClient client(c);
        CHECK_THROWS_AS(client.handshake(), TransportError);
        CHECK(client.reconnects() == 1);

        BackendConfig missing;
        missing.command = {"/nonexistent/kgic-model-server"};
        missing.timeout_seconds = 1;
        missing.max_retries = 0;
        BackendClient nobody(missing);
        CHECK_THROWS_AS(nobody.handshake(), TransportError);
    }

    TEST_CASE("remote stage one mirroring recoin reproduces the local run") {
        const auto g = test::load_fixture_graph("toy");
        const auto split = test::toy_split();
        RecoinPredictor recoin(g, split.train);

        MockServerTable table;
        table.vocab = {"</s>"};
        table.relations = g.relations().labels();
        for (std::size_t e = 0; e < g.num_entities(); ++e) {
            const auto scores = recoin.scores(entity_at(e));
            auto& row = table.property_scores[render_entity_text(g, entity_at(e))];
            for (std::size_t r = 0; r < scores.size(); ++r) row[g.relation_label(relation_at(r))] = scores[r];
        }
        TcpServerThread srv(table);

        RunConfig local;
        local.kge.dim = 8;
        local.kge.epochs = 20;
        local.threshold = 0.5;
        auto remote = local;
        remote.stage_one = StageOneMethod::remote;
        remote.backend = srv.config();

        const auto a = run_ic(g, split, local);
        const auto b = run_ic(g, split, remote);
        CHECK(a.candidates == b.candidates);
        CHECK(a.report.hits_overall == b.report.hits_overall);
        CHECK(a.report.hits_conditional == b.report.hits_conditional);
        CHECK(a.report.pair_precision == b.report.pair_precision);
        CHECK(a.report.coverage == b.report.coverage);
    }
}
