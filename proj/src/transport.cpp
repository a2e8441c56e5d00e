// POSIX transports for the model protocol: a child process spoken to over
// its stdin/stdout, or a TCP socket. All waits go through poll() against a
// deadline.

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <mutex>
#include <thread>

#include "kgic/backend.hpp"

extern char** environ;

namespace kgic {

namespace {

using Clock = std::chrono::steady_clock;

int ms_until(Clock::time_point deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (left <= 0) return 0;
    return left > 1'000'000 ? 1'000'000 : static_cast<int>(left);
}

void ignore_sigpipe() {
    static std::once_flag once;
    std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

void set_nonblocking(int fd) {
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

// Waits until `fd` is ready for `events`; throws TimeoutError at the deadline.
void wait_ready(int fd, short events, Clock::time_point deadline, const char* what) {
    for (;;) {
        pollfd p{fd, events, 0};
        const int rc = ::poll(&p, 1, ms_until(deadline));
        if (rc > 0) return;
        if (rc == 0) throw TimeoutError(std::string("backend timed out while ") + what);
        if (errno != EINTR) throw TransportError(errno_text("poll"));
    }
}

// Line framing over a read fd and a write fd (the same fd for sockets).
class LineChannel {
public:
    void attach(int read_fd, int write_fd, bool socket) {
        read_fd_ = read_fd;
        write_fd_ = write_fd;
        socket_ = socket;
        buffer_.clear();
    }

    void write_line(const std::string& line, Clock::time_point deadline) {
        std::string data = line + '\n';
        std::size_t off = 0;
        while (off < data.size()) {
            wait_ready(write_fd_, POLLOUT, deadline, "sending a request");
            const ssize_t n = socket_ ? ::send(write_fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL)
                                      : ::write(write_fd_, data.data() + off, data.size() - off);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
                throw TransportError(errno_text("backend write"));
            }
            off += static_cast<std::size_t>(n);
        }
    }

    std::string read_line(Clock::time_point deadline) {
        for (;;) {
            if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            wait_ready(read_fd_, POLLIN, deadline, "waiting for a reply");
            char chunk[4096];
            const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
                throw TransportError(errno_text("backend read"));
            }
            if (n == 0) throw TransportError("backend closed the connection");
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    int read_fd_ = -1;
    int write_fd_ = -1;
    bool socket_ = false;
    std::string buffer_;
};

class SubprocessTransport final : public Transport {
public:
    explicit SubprocessTransport(std::vector<std::string> argv) : argv_(std::move(argv)) { ignore_sigpipe(); }
    ~SubprocessTransport() override { stop(true); }

    std::string round_trip(const std::string& line, Clock::time_point deadline) override {
        if (pid_ <= 0) start();
        try {
            channel_.write_line(line, deadline);
            return channel_.read_line(deadline);
        } catch (const TransportError&) {
            stop(false);
            throw;
        }
    }

    void reset() override { stop(false); }

private:
    void start() {
        int in_pipe[2];   // parent writes -> child stdin
        int out_pipe[2];  // child stdout -> parent reads
        if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw TransportError(errno_text("pipe"));
        if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
            ::close(in_pipe[0]);
            ::close(in_pipe[1]);
            throw TransportError(errno_text("pipe"));
        }
        posix_spawn_file_actions_t actions;
        posix_spawn_file_actions_init(&actions);
        posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
        posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);

        std::vector<char*> args;
        for (auto& a : argv_) args.push_back(a.data());
        args.push_back(nullptr);
        pid_t pid = 0;
        const int rc = ::posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
        posix_spawn_file_actions_destroy(&actions);
        ::close(in_pipe[0]);
        ::close(out_pipe[1]);
        if (rc != 0) {
            ::close(in_pipe[1]);
            ::close(out_pipe[0]);
            throw TransportError("cannot start backend '" + argv_[0] + "': " + std::strerror(rc));
        }
        pid_ = pid;
        write_fd_ = in_pipe[1];
        read_fd_ = out_pipe[0];
        set_nonblocking(write_fd_);
        set_nonblocking(read_fd_);
        channel_.attach(read_fd_, write_fd_, false);
    }

    void stop(bool graceful) {
        if (write_fd_ >= 0) ::close(write_fd_);
        if (read_fd_ >= 0) ::close(read_fd_);
        write_fd_ = read_fd_ = -1;
        if (pid_ > 0) {
            // Closing stdin lets a well-behaved server exit; give it a moment.
            for (int i = 0; graceful && i < 40; ++i) {
                if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
                    pid_ = -1;
                    return;
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(5));
            }
            ::kill(pid_, SIGKILL);
            ::waitpid(pid_, nullptr, 0);
            pid_ = -1;
        }
    }

    std::vector<std::string> argv_;
    pid_t pid_ = -1;
    int write_fd_ = -1;
    int read_fd_ = -1;
    LineChannel channel_;
};

class TcpTransport final : public Transport {
public:
    TcpTransport(std::string host, std::uint16_t port) : host_(std::move(host)), port_(port) {}
    ~TcpTransport() override { reset(); }

    std::string round_trip(const std::string& line, Clock::time_point deadline) override {
        if (fd_ < 0) connect(deadline);
        try {
            channel_.write_line(line, deadline);
            return channel_.read_line(deadline);
        } catch (const TransportError&) {
            reset();
            throw;
        }
    }

    void reset() override {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    void connect(Clock::time_point deadline) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        const std::string port = std::to_string(port_);
        if (const int rc = ::getaddrinfo(host_.c_str(), port.c_str(), &hints, &res); rc != 0)
            throw TransportError("cannot resolve backend host '" + host_ + "': " + ::gai_strerror(rc));

        std::string last_error = "no addresses";
        for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
            const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
            if (fd < 0) {
                last_error = std::strerror(errno);
                continue;
            }
            set_nonblocking(fd);
            if (::connect(fd, ai->ai_addr, ai->ai_addrlen) != 0 && errno != EINPROGRESS) {
                last_error = std::strerror(errno);
                ::close(fd);
                continue;
            }
            try {
                wait_ready(fd, POLLOUT, deadline, "connecting");
            } catch (...) {
                ::close(fd);
                ::freeaddrinfo(res);
                throw;
            }
            int err = 0;
            socklen_t len = sizeof err;
            ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
            if (err != 0) {
                last_error = std::strerror(err);
                ::close(fd);
                continue;
            }
            ::freeaddrinfo(res);
            fd_ = fd;
            channel_.attach(fd_, fd_, true);
            return;
        }
        ::freeaddrinfo(res);
        throw TransportError("cannot connect to backend " + host_ + ":" + port + ": " + last_error);
    }

    std::string host_;
    std::uint16_t port_;
    int fd_ = -1;
    LineChannel channel_;
};

}  // namespace

std::unique_ptr<Transport> make_transport(const BackendConfig& config) {
    config.validate();
    if (config.transport == TransportKind::subprocess) return std::make_unique<SubprocessTransport>(config.command);
    return std::make_unique<TcpTransport>(config.host, config.port);
}

}  // namespace kgic
