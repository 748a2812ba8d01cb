#pragma once

// TCP transport for the split-inference protocol: a threaded server that
// answers request frames with greedy continuations, and the user-side client.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>

#include "lm.hpp"
#include "pipeline.hpp"
#include "wire.hpp"

namespace splitdp {

// ---------------------------------------------------------------------------
// Server-side inference

struct ServerArtifacts {
    ProjectionPair proj;  // only the decoder is used server-side
    ToyLm model;
    SoftPrompt prompt;
    size_t continuation = 8;

    void validate() const {
        proj.validate();
        require(proj.input_dim() == model.dim(), ErrorKind::invalid_input, "decoder does not match model width");
        require(static_cast<size_t>(prompt.rows.cols()) == model.dim(), ErrorKind::invalid_input,
                "soft prompt does not match model width");
    }
};

/// Greedy continuation of length `steps` from the context [prompt, xhat].
/// Each generated token's table embedding is appended to the context.
inline std::vector<uint32_t> greedy_continuation(const ToyLm& model, const SoftPrompt& prompt, const Matrix& xhat,
                                                 size_t steps) {
    require(xhat.cols() == static_cast<Eigen::Index>(model.dim()), ErrorKind::invalid_input,
            "batch width does not match model");
    Vector running = prompt.rows.colwise().sum().transpose() + xhat.colwise().sum().transpose();
    double count = static_cast<double>(prompt.length() + static_cast<size_t>(xhat.rows()));
    std::vector<uint32_t> out;
    out.reserve(steps);
    for (size_t s = 0; s < steps; ++s) {
        const Vector logits = model.logits(running / count);
        Eigen::Index best = 0;
        for (Eigen::Index w = 1; w < logits.size(); ++w)
            if (logits(w) > logits(best)) best = w;
        out.push_back(static_cast<uint32_t>(best));
        running += model.table.rows().row(best).transpose();
        count += 1.0;
    }
    return out;
}

/// unpack -> dequantize -> decode -> continuation.
inline std::vector<uint32_t> serve_batch(const ServerArtifacts& art, const QuantizedBatch& q) {
    require(q.d == art.proj.latent_dim(), ErrorKind::protocol, "frame latent dimension does not match decoder");
    return greedy_continuation(art.model, art.prompt, decode(dequantize(q), art.proj), art.continuation);
}

/// Maps a request frame to its reply; never throws.
inline Reply handle_request(const ServerArtifacts& art, std::span<const uint8_t> frame) {
    try {
        return {ReplyStatus::ok, serve_batch(art, unpack(frame))};
    } catch (const Error& e) {
        switch (e.kind()) {
            case ErrorKind::corrupt_payload: return {ReplyStatus::corrupt, {}};
            case ErrorKind::protocol:
            case ErrorKind::incomplete_frame: return {ReplyStatus::protocol, {}};
            default: return {ReplyStatus::internal, {}};
        }
    } catch (...) {
        return {ReplyStatus::internal, {}};
    }
}

// ---------------------------------------------------------------------------
// Sockets

struct Endpoint {
    std::string host = "127.0.0.1";
    uint16_t port = 0;
};

inline Endpoint parse_endpoint(const std::string& s) {
    const auto colon = s.rfind(':');
    require(colon != std::string::npos && colon + 1 < s.size(), ErrorKind::invalid_parameter,
            "endpoint must be host:port");
    const unsigned long port = std::stoul(s.substr(colon + 1));
    require(port <= 65535, ErrorKind::invalid_parameter, "port out of range");
    return {s.substr(0, colon), static_cast<uint16_t>(port)};
}

class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Socket& operator=(Socket&& o) noexcept {
        if (this != &o) {
            reset();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    ~Socket() { reset(); }

    int fd() const noexcept { return fd_; }
    bool valid() const noexcept { return fd_ >= 0; }

    void shutdown() noexcept {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    }
    void reset() noexcept {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

    void set_timeout(std::chrono::milliseconds timeout) const {
        timeval tv{};
        tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
        tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
        ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
        ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    }

    void send_all(std::span<const uint8_t> bytes) const {
        size_t sent = 0;
        while (sent < bytes.size()) {
            const ssize_t k = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
            if (k < 0) {
                if (errno == EINTR) continue;
                if (errno == EAGAIN || errno == EWOULDBLOCK) throw Error(ErrorKind::timeout, "send timed out");
                throw Error(ErrorKind::io, std::string("send failed: ") + std::strerror(errno));
            }
            sent += static_cast<size_t>(k);
        }
    }

    /// Fills `out` completely. Returns false on a clean EOF before the first
    /// byte; EOF part-way raises incomplete-frame.
    bool recv_exact(std::span<uint8_t> out) const {
        size_t got = 0;
        while (got < out.size()) {
            const ssize_t k = ::recv(fd_, out.data() + got, out.size() - got, 0);
            if (k == 0) {
                if (got == 0) return false;
                throw Error(ErrorKind::incomplete_frame, "peer closed mid-frame");
            }
            if (k < 0) {
                if (errno == EINTR) continue;
                if (errno == EAGAIN || errno == EWOULDBLOCK) throw Error(ErrorKind::timeout, "receive timed out");
                throw Error(ErrorKind::io, std::string("recv failed: ") + std::strerror(errno));
            }
            got += static_cast<size_t>(k);
        }
        return true;
    }

private:
    int fd_ = -1;
};

namespace detail {

inline addrinfo* resolve(const Endpoint& ep, bool passive) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    if (passive) hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(ep.port);
    if (::getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
        throw Error(ErrorKind::io, "cannot resolve " + ep.host);
    return res;
}

}  // namespace detail

/// Connects within `timeout`; failure to reach the endpoint in time (refused,
/// unreachable or silent) raises a timeout error.
inline Socket connect_to(const Endpoint& ep, std::chrono::milliseconds timeout) {
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> res(detail::resolve(ep, false), &::freeaddrinfo);
    Socket sock(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    if (!sock.valid()) throw Error(ErrorKind::io, "socket() failed");
    const int flags = ::fcntl(sock.fd(), F_GETFL, 0);
    ::fcntl(sock.fd(), F_SETFL, flags | O_NONBLOCK);
    if (::connect(sock.fd(), res->ai_addr, res->ai_addrlen) != 0) {
        if (errno != EINPROGRESS) throw Error(ErrorKind::timeout, "endpoint unreachable: " + std::string(std::strerror(errno)));
        pollfd pfd{sock.fd(), POLLOUT, 0};
        const int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
        if (ready <= 0) throw Error(ErrorKind::timeout, "connect timed out");
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(sock.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) throw Error(ErrorKind::timeout, "endpoint unreachable: " + std::string(std::strerror(err)));
    }
    ::fcntl(sock.fd(), F_SETFL, flags);
    const int one = 1;
    ::setsockopt(sock.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    sock.set_timeout(timeout);
    return sock;
}

/// Reads one reply frame from `sock`.
inline Reply read_reply(const Socket& sock) {
    Bytes buf(kReplyHeaderSize);
    if (!sock.recv_exact(buf)) throw Error(ErrorKind::incomplete_frame, "connection closed before reply");
    const size_t total = reply_length(buf);
    buf.resize(total);
    if (!sock.recv_exact(std::span<uint8_t>(buf).subspan(kReplyHeaderSize)))
        throw Error(ErrorKind::incomplete_frame, "connection closed mid-reply");
    return decode_reply(buf);
}

// ---------------------------------------------------------------------------
// Server

/// One thread per connection; artifacts are shared read-only. A malformed
/// frame is answered with an error reply and closes only its connection.
class Server {
public:
    Server(std::shared_ptr<const ServerArtifacts> artifacts, Endpoint listen_on,
           std::chrono::milliseconds idle_timeout = std::chrono::seconds(30))
        : artifacts_(std::move(artifacts)), idle_timeout_(idle_timeout) {
        artifacts_->validate();
        std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> res(detail::resolve(listen_on, true), &::freeaddrinfo);
        listener_ = Socket(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
        if (!listener_.valid()) throw Error(ErrorKind::io, "socket() failed");
        const int one = 1;
        ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (::bind(listener_.fd(), res->ai_addr, res->ai_addrlen) != 0)
            throw Error(ErrorKind::io, std::string("bind failed: ") + std::strerror(errno));
        if (::listen(listener_.fd(), 64) != 0) throw Error(ErrorKind::io, "listen failed");
        sockaddr_in addr{};
        socklen_t len = sizeof addr;
        ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        acceptor_ = std::thread([this] { accept_loop(); });
    }

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;
    ~Server() { stop(); }

    uint16_t port() const noexcept { return port_; }
    size_t served() const noexcept { return served_.load(); }

    void stop() {
        if (stopping_.exchange(true)) return;
        if (acceptor_.joinable()) acceptor_.join();
        std::list<Session> sessions;
        {
            std::lock_guard lock(mutex_);
            for (auto& s : sessions_) ::shutdown(s.fd, SHUT_RDWR);
            sessions.swap(sessions_);
        }
        for (auto& s : sessions)
            if (s.thread.joinable()) s.thread.join();
        listener_.reset();
    }

    /// Blocks until stop() is called from elsewhere (e.g. a signal watcher).
    void wait() {
        while (!stopping_.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }

private:
    struct Session {
        int fd;
        std::thread thread;
    };

    void accept_loop() {
        while (!stopping_.load()) {
            pollfd pfd{listener_.fd(), POLLIN, 0};
            if (::poll(&pfd, 1, 50) <= 0) continue;
            const int fd = ::accept(listener_.fd(), nullptr, nullptr);
            if (fd < 0) continue;
            std::lock_guard lock(mutex_);
            reap_finished();
            auto& session = sessions_.emplace_back(Session{fd, {}});
            session.thread = std::thread([this, fd] { run_session(Socket(fd)); });
        }
    }

    // Caller holds mutex_.
    void reap_finished() {
        for (auto it = sessions_.begin(); it != sessions_.end();) {
            if (it->fd < 0 && it->thread.joinable()) {
                it->thread.join();
                it = sessions_.erase(it);
            } else {
                ++it;
            }
        }
    }

    void mark_done(int fd) {
        std::lock_guard lock(mutex_);
        for (auto& s : sessions_)
            if (s.fd == fd) s.fd = -1;
    }

    void run_session(Socket sock) {
        const int fd = sock.fd();
        sock.set_timeout(idle_timeout_);
        try {
            while (!stopping_.load()) {
                Bytes frame(kFrameHeaderSize);
                if (!sock.recv_exact(frame)) break;
                size_t total = 0;
                try {
                    total = request_length(frame);
                } catch (const Error&) {
                    sock.send_all(encode_reply({ReplyStatus::protocol, {}}));
                    break;
                }
                frame.resize(total);
                if (!sock.recv_exact(std::span<uint8_t>(frame).subspan(kFrameHeaderSize))) break;
                const Reply reply = handle_request(*artifacts_, frame);
                sock.send_all(encode_reply(reply));
                ++served_;
                if (reply.status != ReplyStatus::ok) break;
            }
        } catch (const std::exception&) {
            // Timeouts and broken pipes end only this session.
        }
        sock.shutdown();
        mark_done(fd);
    }

    std::shared_ptr<const ServerArtifacts> artifacts_;
    std::chrono::milliseconds idle_timeout_;
    Socket listener_;
    uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::atomic<size_t> served_{0};
    std::mutex mutex_;
    std::list<Session> sessions_;
    std::thread acceptor_;
};

// ---------------------------------------------------------------------------
// Client

/// User-side artifacts. Raw tokens and embeddings stay here; only the packed
/// quantized batch is transmitted.
struct ClientArtifacts {
    EmbeddingTable table;
    ProjectionPair proj;  // only the encoder is used client-side
    MechanismParams mech;

    Pipeline pipeline() const { return Pipeline{table, proj, mech}; }
};

/// Privatized request frame for `tokens`.
inline Bytes build_request(const ClientArtifacts& art, const TokenSequence& tokens, const Rng& rng) {
    const Pipeline p = art.pipeline();
    p.validate();
    return pack(stochastic_quantize(p.latents(tokens), p.mech, rng));
}

/// Sends one request frame on an open connection and waits for the reply.
inline std::vector<uint32_t> send_request(const Socket& sock, std::span<const uint8_t> frame) {
    sock.send_all(frame);
    const Reply reply = read_reply(sock);
    if (reply.status != ReplyStatus::ok)
        throw Error(ErrorKind::server_error,
                    "server replied with status " + std::to_string(static_cast<int>(reply.status)));
    return reply.tokens;
}

inline std::vector<uint32_t> client_round_trip(const TokenSequence& tokens, const ClientArtifacts& art,
                                               const Endpoint& endpoint, const Rng& rng,
                                               std::chrono::milliseconds timeout = std::chrono::seconds(5)) {
    const Bytes frame = build_request(art, tokens, rng);
    const Socket sock = connect_to(endpoint, timeout);
    return send_request(sock, frame);
}

}  // namespace splitdp
