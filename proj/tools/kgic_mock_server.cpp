// Protocol mock server backed by a fixed JSON table. Serves stdin/stdout by
// default, or one TCP listener with --tcp.

#include <iostream>

#include "CLI11.hpp"
#include "kgic/backend.hpp"

int main(int argc, char** argv) {
    CLI::App app{"kgic_mock_server: fixed-table model server for the kgic protocol"};
    std::string table_path;
    int port = -1;
    app.add_option("--table", table_path, "Mock table (JSON)")->required();
    app.add_option("--tcp", port, "Listen on 127.0.0.1:<port> instead of stdio (0 picks a port)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        const kgic::MockServer server(kgic::load_mock_table(table_path));
        if (port < 0) {
            std::ios::sync_with_stdio(false);
            kgic::serve_stream(server, std::cin, std::cout);
            return 0;
        }
        kgic::TcpMockServer tcp(server, static_cast<std::uint16_t>(port));
        std::cerr << "listening on 127.0.0.1:" << tcp.port() << std::endl;
        tcp.run();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
