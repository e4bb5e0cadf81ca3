#include "ioda/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>

#include <sodium.h>

namespace ioda {

// ---------------------------------------------------------------------------
// Frames

std::string to_string(FrameType t) {
    switch (t) {
        case FrameType::Hello: return "HELLO";
        case FrameType::Challenge: return "CHALLENGE";
        case FrameType::Auth: return "AUTH";
        case FrameType::Open: return "OPEN";
        case FrameType::Query: return "QUERY";
        case FrameType::Result: return "RESULT";
        case FrameType::Subscribe: return "SUBSCRIBE";
        case FrameType::Event: return "EVENT";
        case FrameType::Ack: return "ACK";
        case FrameType::Resolve: return "RESOLVE";
        case FrameType::Resolved: return "RESOLVED";
        case FrameType::Error: return "ERROR";
        case FrameType::Bye: return "BYE";
    }
    return "?";
}

FrameType frame_type_from_string(const std::string& s) {
    static const std::pair<const char*, FrameType> table[] = {
        {"HELLO", FrameType::Hello},     {"CHALLENGE", FrameType::Challenge},
        {"AUTH", FrameType::Auth},       {"OPEN", FrameType::Open},
        {"QUERY", FrameType::Query},     {"RESULT", FrameType::Result},
        {"SUBSCRIBE", FrameType::Subscribe}, {"EVENT", FrameType::Event},
        {"ACK", FrameType::Ack},         {"RESOLVE", FrameType::Resolve},
        {"RESOLVED", FrameType::Resolved}, {"ERROR", FrameType::Error},
        {"BYE", FrameType::Bye},
    };
    for (const auto& [name, type] : table)
        if (s == name) return type;
    throw ProtocolViolation("unknown frame type '" + s + "'");
}

std::string encode_frame(const Frame& f) {
    Value j;
    j["t"] = to_string(f.type);
    j["sid"] = f.sid;
    j["body"] = f.body;
    std::string payload = j.dump();
    if (payload.size() > kMaxFrameLen)
        throw ProtocolViolation("frame exceeds 16 MiB cap");
    std::string out;
    out.reserve(4 + payload.size());
    std::uint32_t len = static_cast<std::uint32_t>(payload.size());
    out.push_back(static_cast<char>((len >> 24) & 0xff));
    out.push_back(static_cast<char>((len >> 16) & 0xff));
    out.push_back(static_cast<char>((len >> 8) & 0xff));
    out.push_back(static_cast<char>(len & 0xff));
    out += payload;
    return out;
}

Frame decode_frame_payload(const std::string& payload) {
    Value j = Value::parse(payload, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw ProtocolViolation("frame payload is not a JSON object");
    if (!j.contains("t") || !j.contains("sid") || !j.contains("body") ||
        j.size() != 3)
        throw ProtocolViolation("frame must carry exactly t, sid, body");
    if (!j.at("t").is_string() || !j.at("sid").is_string() ||
        !j.at("body").is_object())
        throw ProtocolViolation("bad frame field types");
    Frame f;
    f.type = frame_type_from_string(j.at("t").get<std::string>());
    f.sid = j.at("sid").get<std::string>();
    f.body = j.at("body");
    return f;
}

void send_frame(Transport& t, const Frame& f) {
    FrameTrace::log(f.sid, "send", f.type);
    t.send(encode_frame(f));
}

Frame recv_frame(Transport& t) {
    std::string prefix = t.recv(4);
    std::uint32_t len = (static_cast<std::uint32_t>(static_cast<unsigned char>(prefix[0])) << 24) |
                        (static_cast<std::uint32_t>(static_cast<unsigned char>(prefix[1])) << 16) |
                        (static_cast<std::uint32_t>(static_cast<unsigned char>(prefix[2])) << 8) |
                        static_cast<std::uint32_t>(static_cast<unsigned char>(prefix[3]));
    if (len == 0 || len > kMaxFrameLen)
        throw ProtocolViolation("bad frame length " + std::to_string(len));
    Frame f = decode_frame_payload(t.recv(len));
    FrameTrace::log(f.sid, "recv", f.type);
    return f;
}

// ---------------------------------------------------------------------------
// In-process transport

namespace {

struct Pipe {
    std::mutex mu;
    std::condition_variable cv;
    std::string buf;
    bool closed = false;
};

class InprocTransport : public Transport {
public:
    InprocTransport(std::shared_ptr<Pipe> in, std::shared_ptr<Pipe> out)
        : in_(std::move(in)), out_(std::move(out)) {}

    void send(const std::string& bytes) override {
        std::lock_guard lock(out_->mu);
        if (out_->closed) throw TransportClosed("pipe closed");
        out_->buf += bytes;
        out_->cv.notify_all();
    }

    std::string recv(std::size_t n) override {
        std::unique_lock lock(in_->mu);
        in_->cv.wait(lock, [&] { return in_->buf.size() >= n || in_->closed; });
        if (in_->buf.size() < n) throw TransportClosed("pipe closed");
        std::string out = in_->buf.substr(0, n);
        in_->buf.erase(0, n);
        return out;
    }

    void close() override {
        for (auto& p : {in_, out_}) {
            std::lock_guard lock(p->mu);
            p->closed = true;
            p->cv.notify_all();
        }
    }

private:
    std::shared_ptr<Pipe> in_, out_;
};

}  // namespace

std::pair<std::shared_ptr<Transport>, std::shared_ptr<Transport>> make_inproc_pair() {
    auto a = std::make_shared<Pipe>();
    auto b = std::make_shared<Pipe>();
    return {std::make_shared<InprocTransport>(a, b),
            std::make_shared<InprocTransport>(b, a)};
}

// ---------------------------------------------------------------------------
// TCP transport

namespace {

class TcpTransport : public Transport {
public:
    explicit TcpTransport(int fd) : fd_(fd) {}
    ~TcpTransport() override { close(); }

    void send(const std::string& bytes) override {
        std::size_t off = 0;
        while (off < bytes.size()) {
            ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off,
                               MSG_NOSIGNAL);
            if (n <= 0) throw TransportClosed("tcp send failed");
            off += static_cast<std::size_t>(n);
        }
    }

    std::string recv(std::size_t n) override {
        std::string out(n, '\0');
        std::size_t off = 0;
        while (off < n) {
            ssize_t got = ::recv(fd_, out.data() + off, n - off, 0);
            if (got <= 0) throw TransportClosed("tcp recv failed");
            off += static_cast<std::size_t>(got);
        }
        return out;
    }

    void close() override {
        int fd = fd_.exchange(-1);
        if (fd >= 0) {
            ::shutdown(fd, SHUT_RDWR);
            ::close(fd);
        }
    }

private:
    std::atomic<int> fd_;
};

class TcpListenerImpl : public TcpListener {
public:
    explicit TcpListenerImpl(std::uint16_t port) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw TransportClosed("socket() failed");
        int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(port);
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
            ::listen(fd_, 16) != 0) {
            ::close(fd_);
            throw TransportClosed("bind/listen failed");
        }
        socklen_t len = sizeof(addr);
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
    }

    ~TcpListenerImpl() override { close(); }

    std::uint16_t port() const override { return port_; }

    std::shared_ptr<Transport> accept() override {
        int fd = ::accept(fd_.load(), nullptr, nullptr);
        if (fd < 0) throw TransportClosed("listener closed");
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        return std::make_shared<TcpTransport>(fd);
    }

    void close() override {
        int fd = fd_.exchange(-1);
        if (fd >= 0) {
            ::shutdown(fd, SHUT_RDWR);
            ::close(fd);
        }
    }

private:
    std::atomic<int> fd_{-1};
    std::uint16_t port_ = 0;
};

}  // namespace

std::unique_ptr<TcpListener> make_tcp_listener(std::uint16_t port) {
    return std::make_unique<TcpListenerImpl>(port);
}

std::shared_ptr<Transport> tcp_connect(const std::string& host, std::uint16_t port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw TransportClosed("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw TransportClosed("bad host '" + host + "'");
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw TransportClosed("connect to " + host + ":" + std::to_string(port) +
                              " failed");
    }
    return std::make_shared<TcpTransport>(fd);
}

// ---------------------------------------------------------------------------
// Identity

namespace {

void ensure_sodium() {
    static const int rc = sodium_init();
    if (rc < 0) throw Error("Crypto", "libsodium initialization failed");
}

std::string to_hex(const unsigned char* data, std::size_t n) {
    std::string out(2 * n + 1, '\0');
    sodium_bin2hex(out.data(), out.size(), data, n);
    out.resize(2 * n);
    return out;
}

std::vector<unsigned char> from_hex(const std::string& hex) {
    std::vector<unsigned char> out(hex.size() / 2);
    std::size_t got = 0;
    if (sodium_hex2bin(out.data(), out.size(), hex.data(), hex.size(), nullptr,
                       &got, nullptr) != 0)
        throw AuthFailed("bad hex key material");
    out.resize(got);
    return out;
}

}  // namespace

KeyPair generate_keypair() {
    ensure_sodium();
    unsigned char pk[crypto_sign_PUBLICKEYBYTES], sk[crypto_sign_SECRETKEYBYTES];
    crypto_sign_keypair(pk, sk);
    return {to_hex(pk, sizeof(pk)), to_hex(sk, sizeof(sk))};
}

KeyPair keypair_from_seed(const std::string& seed) {
    ensure_sodium();
    unsigned char h[crypto_hash_sha256_BYTES];
    crypto_hash_sha256(h, reinterpret_cast<const unsigned char*>(seed.data()),
                       seed.size());
    static_assert(crypto_sign_SEEDBYTES == crypto_hash_sha256_BYTES);
    unsigned char pk[crypto_sign_PUBLICKEYBYTES], sk[crypto_sign_SECRETKEYBYTES];
    crypto_sign_seed_keypair(pk, sk, h);
    return {to_hex(pk, sizeof(pk)), to_hex(sk, sizeof(sk))};
}

std::string sign_message(const std::string& message,
                         const std::string& signing_key_hex) {
    ensure_sodium();
    auto sk = from_hex(signing_key_hex);
    if (sk.size() != crypto_sign_SECRETKEYBYTES)
        throw AuthFailed("bad signing key length");
    unsigned char sig[crypto_sign_BYTES];
    crypto_sign_detached(sig, nullptr,
                         reinterpret_cast<const unsigned char*>(message.data()),
                         message.size(), sk.data());
    return to_hex(sig, sizeof(sig));
}

bool verify_signature(const std::string& message, const std::string& signature_hex,
                      const std::string& verify_key_hex) {
    ensure_sodium();
    std::vector<unsigned char> sig, pk;
    try {
        sig = from_hex(signature_hex);
        pk = from_hex(verify_key_hex);
    } catch (const AuthFailed&) {
        return false;
    }
    if (sig.size() != crypto_sign_BYTES || pk.size() != crypto_sign_PUBLICKEYBYTES)
        return false;
    return crypto_sign_verify_detached(
               sig.data(), reinterpret_cast<const unsigned char*>(message.data()),
               message.size(), pk.data()) == 0;
}

// ---------------------------------------------------------------------------
// Frame trace

namespace {
std::mutex g_trace_mu;
bool g_trace_enabled = false;
std::vector<TraceEntry> g_trace;
}  // namespace

void FrameTrace::enable() {
    std::lock_guard lock(g_trace_mu);
    g_trace_enabled = true;
}

void FrameTrace::disable() {
    std::lock_guard lock(g_trace_mu);
    g_trace_enabled = false;
}

void FrameTrace::clear() {
    std::lock_guard lock(g_trace_mu);
    g_trace.clear();
}

void FrameTrace::log(const std::string& sid, const char* dir, FrameType type) {
    std::lock_guard lock(g_trace_mu);
    if (g_trace_enabled) g_trace.push_back({sid, dir, type});
}

std::vector<TraceEntry> FrameTrace::snapshot() {
    std::lock_guard lock(g_trace_mu);
    return g_trace;
}

bool no_data_before_auth(const std::vector<TraceEntry>& trace) {
    std::map<std::string, std::pair<bool, bool>> auth;  // sid -> (sent, recvd)
    for (const auto& e : trace) {
        if (e.type == FrameType::Auth) {
            if (e.dir == std::string("send"))
                auth[e.sid].first = true;
            else
                auth[e.sid].second = true;
        }
        if (e.type == FrameType::Query || e.type == FrameType::Subscribe ||
            e.type == FrameType::Resolve) {
            auto it = auth.find(e.sid);
            if (it == auth.end() || !it->second.first || !it->second.second)
                return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Handshake

namespace {

std::string fresh_nonce() {
    ensure_sodium();
    unsigned char buf[16];
    randombytes_buf(buf, sizeof(buf));
    return to_hex(buf, sizeof(buf));
}

// both nonces and both addresses, canonical JSON, signed by both sides
std::string transcript(const std::string& ni, const std::string& nr,
                       const GateAddress& ai, const GateAddress& ar) {
    Value j;
    j["ni"] = ni;
    j["nr"] = nr;
    j["ai"] = format_address(ai);
    j["ar"] = format_address(ar);
    return j.dump();
}

[[noreturn]] void throw_error_frame(const Frame& f) {
    std::string code = f.body.value("code", "Error");
    std::string msg = f.body.value("msg", "");
    if (code == "AccessDenied") throw AccessDenied(msg);
    if (code == "UnknownOPort") throw UnknownOPort(msg);
    if (code == "UnknownIPort") throw UnknownIPort(msg);
    if (code == "NotFound") throw NotFound(msg);
    if (code == "UnknownPeer") throw UnknownPeer(msg);
    if (code == "AuthFailed") throw AuthFailed(msg);
    if (code == "TypeMismatch") throw TypeMismatch(msg);
    if (code == "ProtocolViolation") throw ProtocolViolation(msg);
    if (code == "SessionClosed") throw SessionClosed(msg);
    throw Error(code, msg);
}

Frame error_frame(const std::string& sid, const Error& e) {
    Frame f;
    f.type = FrameType::Error;
    f.sid = sid;
    f.body = {{"code", e.code()}, {"msg", e.what()}};
    return f;
}

Value record_batch_json(const Batch& batch) {
    Value arr = Value::array();
    for (const auto& r : batch) arr.push_back(to_json(r));
    return arr;
}

Batch record_batch_from_json(const Value& arr) {
    Batch out;
    for (const auto& j : arr) out.push_back(record_from_json(j));
    return out;
}

constexpr std::size_t kResultChunkBytes = 1u * 1024u * 1024u;

}  // namespace

std::unique_ptr<WireSession> establish(const GateIdentity& local,
                                       std::shared_ptr<Transport> transport,
                                       const GateAddress& remote_addr,
                                       const IdentityLookup& identity_lookup) {
    auto session = std::unique_ptr<WireSession>(new WireSession());
    session->transport_ = transport;
    session->sid_ = fresh_nonce();
    session->remote_ = remote_addr.gate_only();

    std::string ni = fresh_nonce();
    Frame hello{FrameType::Hello, session->sid_,
                {{"addr", format_address(local.address.gate_only())}, {"nonce", ni}}};
    send_frame(*transport, hello);

    Frame challenge = recv_frame(*transport);
    if (challenge.type == FrameType::Error) throw_error_frame(challenge);
    if (challenge.type != FrameType::Challenge || challenge.sid != session->sid_)
        throw ProtocolViolation("expected CHALLENGE");
    GateAddress ar = parse_address(challenge.body.at("addr").get<std::string>());
    std::string nr = challenge.body.at("nonce").get<std::string>();
    if (ar.gate_only() != remote_addr.gate_only()) {
        send_frame(*transport, error_frame(session->sid_,
                                           AuthFailed("responder address mismatch")));
        transport->close();
        throw AuthFailed("responder identifies as '" + format_address(ar) + "'");
    }

    std::string msg = transcript(ni, nr, local.address.gate_only(), ar.gate_only());
    Frame auth{FrameType::Auth, session->sid_,
               {{"sig", sign_message(msg, local.signing_key_hex)}}};
    send_frame(*transport, auth);

    Frame peer_auth = recv_frame(*transport);
    if (peer_auth.type == FrameType::Error) throw_error_frame(peer_auth);
    if (peer_auth.type != FrameType::Auth)
        throw ProtocolViolation("expected AUTH");
    auto key = identity_lookup(ar.gate_only());
    if (!key || !verify_signature(msg, peer_auth.body.at("sig").get<std::string>(), *key)) {
        send_frame(*transport, error_frame(session->sid_,
                                           AuthFailed("responder signature invalid")));
        transport->close();
        throw AuthFailed("responder failed authentication");
    }

    send_frame(*transport, Frame{FrameType::Open, session->sid_, Value::object()});
    session->state_ = WireSession::State::Open;
    return session;
}

WireSession::~WireSession() { close(); }

void WireSession::close() {
    State expected = State::Open;
    if (state_.compare_exchange_strong(expected, State::Closed)) {
        try {
            send_frame(*transport_, Frame{FrameType::Bye, sid_, Value::object()});
        } catch (const TransportClosed&) {
        }
    }
    state_ = State::Closed;
    if (transport_) transport_->close();
}

Frame WireSession::request(const Frame& f) {
    std::lock_guard lock(mu_);
    if (state_ != State::Open) throw SessionClosed("session is not open");
    try {
        send_frame(*transport_, f);
        return recv_frame(*transport_);
    } catch (const TransportClosed&) {
        state_ = State::Closed;
        throw SessionClosed("transport lost");
    }
}

Batch WireSession::remote_query(const std::string& oport, const Principal& principal,
                                const std::optional<FilterOp>& filter) {
    Frame q{FrameType::Query, sid_,
            {{"oport", oport}, {"principal", principal_to_json(principal)}}};
    if (filter) {
        Dataflow df;
        df.stages.emplace_back(*filter);
        q.body["filter"] = dataflow_to_json(df)[0];
    }
    Frame resp = request(q);
    Batch out;
    while (true) {
        if (resp.type == FrameType::Error) throw_error_frame(resp);
        if (resp.type != FrameType::Result) throw ProtocolViolation("expected RESULT");
        Batch chunk = record_batch_from_json(resp.body.at("records"));
        out.insert(out.end(), chunk.begin(), chunk.end());
        if (!resp.body.value("more", false)) break;
        try {
            resp = recv_frame(*transport_);
        } catch (const TransportClosed&) {
            state_ = State::Closed;
            throw SessionClosed("transport lost mid-result");
        }
    }
    return out;
}

GateAddress WireSession::remote_resolve(const GateMetadata& requester,
                                        const Selector& sel) {
    Frame q{FrameType::Resolve, sid_,
            {{"requester", metadata_to_payload(requester)},
             {"selector", selector_to_json(sel)}}};
    Frame resp = request(q);
    if (resp.type == FrameType::Error) throw_error_frame(resp);
    if (resp.type != FrameType::Resolved) throw ProtocolViolation("expected RESOLVED");
    return parse_address(resp.body.at("address").get<std::string>());
}

RemoteSubscription::~RemoteSubscription() {
    close();
    if (!pump_.joinable()) return;
    // the pump's own weak_ptr lock can be the last reference, in which case
    // this destructor runs on the pump thread and must not join itself
    if (pump_.get_id() == std::this_thread::get_id())
        pump_.detach();
    else
        pump_.join();
}

std::optional<Subscription::Event> RemoteSubscription::poll(int timeout_ms) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                 [&] { return !queue_.empty() || closed_; });
    if (queue_.empty()) return std::nullopt;
    auto e = queue_.front();
    queue_.pop_front();
    return e;
}

void RemoteSubscription::ack(std::uint64_t seq) {
    {
        std::lock_guard lock(mu_);
        acked_ = std::max(acked_, seq);
        if (closed_) return;
    }
    try {
        send_frame(*transport_, Frame{FrameType::Ack, sid_, {{"seq", seq}}});
    } catch (const TransportClosed&) {
        std::lock_guard lock(mu_);
        closed_ = true;
        cv_.notify_all();
    }
}

std::uint64_t RemoteSubscription::acked() const {
    std::lock_guard lock(mu_);
    return acked_;
}

std::size_t RemoteSubscription::pending() const {
    std::lock_guard lock(mu_);
    return queue_.size();
}

bool RemoteSubscription::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

void RemoteSubscription::close() {
    {
        std::lock_guard lock(mu_);
        if (closed_) return;
        closed_ = true;
        cv_.notify_all();
    }
    if (transport_) transport_->close();
}

std::shared_ptr<RemoteSubscription> WireSession::remote_subscribe(
    const std::string& oport, const Principal& principal, std::uint64_t from_seq) {
    Frame q{FrameType::Subscribe, sid_,
            {{"oport", oport},
             {"principal", principal_to_json(principal)},
             {"from_seq", from_seq}}};
    Frame resp = request(q);
    if (resp.type == FrameType::Error) throw_error_frame(resp);
    if (resp.type != FrameType::Open)
        throw ProtocolViolation("expected subscription OPEN");

    auto sub = std::shared_ptr<RemoteSubscription>(new RemoteSubscription());
    sub->transport_ = transport_;
    sub->sid_ = sid_;
    sub->acked_ = from_seq;
    std::weak_ptr<RemoteSubscription> weak = sub;
    auto transport = transport_;
    sub->pump_ = std::thread([weak, transport] {
        try {
            while (true) {
                Frame f = recv_frame(*transport);
                auto s = weak.lock();
                if (!s) return;
                if (f.type == FrameType::Event) {
                    Subscription::Event e{f.body.at("seq").get<std::uint64_t>(),
                                          record_from_json(f.body.at("record"))};
                    std::lock_guard lock(s->mu_);
                    if (s->closed_) return;
                    s->queue_.push_back(std::move(e));
                    s->cv_.notify_all();
                } else if (f.type == FrameType::Bye || f.type == FrameType::Error) {
                    std::lock_guard lock(s->mu_);
                    s->closed_ = true;
                    s->cv_.notify_all();
                    return;
                }
            }
        } catch (const TransportClosed&) {
        } catch (const ProtocolViolation&) {
        }
        if (auto s = weak.lock()) {
            std::lock_guard lock(s->mu_);
            s->closed_ = true;
            s->cv_.notify_all();
        }
    });
    return sub;
}

// ---------------------------------------------------------------------------
// Responder

namespace {

void serve_subscription(Transport& transport, const std::string& sid, Gate& gate,
                        const Frame& req) {
    std::string oport = req.body.at("oport").get<std::string>();
    Principal principal = principal_from_json(req.body.at("principal"));
    std::uint64_t from_seq = req.body.at("from_seq").get<std::uint64_t>();

    auto sub = gate.watch(oport, principal, from_seq);  // throws before OPEN
    send_frame(transport, Frame{FrameType::Open, sid, Value::object()});

    std::atomic<bool> done{false};
    std::thread writer([&] {
        try {
            while (!done) {
                auto e = sub->poll(50);
                if (!e) continue;
                send_frame(transport,
                           Frame{FrameType::Event, sid,
                                 {{"seq", e->seq}, {"record", to_json(e->record)}}});
            }
        } catch (const TransportClosed&) {
        }
        done = true;
    });

    try {
        while (!done) {
            Frame f = recv_frame(transport);
            if (f.type == FrameType::Ack) {
                sub->ack(f.body.at("seq").get<std::uint64_t>());
            } else if (f.type == FrameType::Bye) {
                break;
            }
        }
    } catch (const TransportClosed&) {
    } catch (const ProtocolViolation&) {
    }
    done = true;
    sub->close();
    writer.join();
}

void send_query_result(Transport& transport, const std::string& sid,
                       const Batch& batch) {
    // paginate large results under the frame cap
    std::size_t i = 0;
    do {
        Value records = Value::array();
        std::size_t bytes = 0;
        while (i < batch.size() && bytes < kResultChunkBytes) {
            Value j = to_json(batch[i]);
            bytes += j.dump().size();
            records.push_back(std::move(j));
            ++i;
        }
        bool more = i < batch.size();
        send_frame(transport, Frame{FrameType::Result, sid,
                                    {{"records", records}, {"more", more}}});
    } while (i < batch.size());
}

}  // namespace

void serve_session(std::shared_ptr<Transport> transport, const ServeContext& ctx) {
    std::string sid;
    try {
        Frame hello = recv_frame(*transport);
        if (hello.type != FrameType::Hello)
            throw ProtocolViolation("expected HELLO");
        sid = hello.sid;
        GateAddress ai = parse_address(hello.body.at("addr").get<std::string>());
        std::string ni = hello.body.at("nonce").get<std::string>();
        std::string nr = fresh_nonce();
        GateAddress ar = ctx.identity.address.gate_only();
        send_frame(*transport, Frame{FrameType::Challenge, sid,
                                     {{"addr", format_address(ar)}, {"nonce", nr}}});

        Frame auth = recv_frame(*transport);
        if (auth.type != FrameType::Auth) throw ProtocolViolation("expected AUTH");
        std::string msg = transcript(ni, nr, ai.gate_only(), ar);
        auto key = ctx.identity_lookup(ai.gate_only());
        if (!key ||
            !verify_signature(msg, auth.body.at("sig").get<std::string>(), *key)) {
            send_frame(*transport,
                       error_frame(sid, AuthFailed("initiator failed authentication")));
            transport->close();
            return;
        }
        send_frame(*transport,
                   Frame{FrameType::Auth, sid,
                         {{"sig", sign_message(msg, ctx.identity.signing_key_hex)}}});

        Frame open = recv_frame(*transport);
        if (open.type == FrameType::Error) {
            transport->close();
            return;
        }
        if (open.type != FrameType::Open) throw ProtocolViolation("expected OPEN");

        while (true) {
            Frame req = recv_frame(*transport);
            if (req.type == FrameType::Bye) break;
            try {
                switch (req.type) {
                    case FrameType::Query: {
                        std::string oport = req.body.at("oport").get<std::string>();
                        Principal principal =
                            principal_from_json(req.body.at("principal"));
                        std::optional<FilterOp> filter;
                        if (req.body.contains("filter")) {
                            Value arr = Value::array();
                            arr.push_back(req.body.at("filter"));
                            Dataflow df = dataflow_from_json(arr);
                            filter = std::get<FilterOp>(df.stages.at(0));
                        }
                        Batch result = ctx.gate->query(oport, principal, filter);
                        send_query_result(*transport, sid, result);
                        break;
                    }
                    case FrameType::Subscribe:
                        serve_subscription(*transport, sid, *ctx.gate, req);
                        return;  // the stream consumed the session
                    case FrameType::Resolve: {
                        if (!ctx.registry)
                            throw NotFound("this endpoint does not serve resolution");
                        GateMetadata requester =
                            metadata_from_payload(req.body.at("requester"));
                        Selector sel = selector_from_json(req.body.at("selector"));
                        PeeringTable empty;
                        GateAddress addr = resolve_cross(
                            *ctx.registry, ctx.peering ? *ctx.peering : empty,
                            requester, sel);
                        send_frame(*transport,
                                   Frame{FrameType::Resolved, sid,
                                         {{"address", format_address(addr)}}});
                        break;
                    }
                    default:
                        throw ProtocolViolation("unexpected frame " +
                                                to_string(req.type));
                }
            } catch (const Error& e) {
                send_frame(*transport, error_frame(sid, e));
            }
        }
    } catch (const TransportClosed&) {
    } catch (const ProtocolViolation&) {
        if (!sid.empty()) {
            try {
                send_frame(*transport,
                           error_frame(sid, ProtocolViolation("bad frame sequence")));
            } catch (const TransportClosed&) {
            }
        }
    } catch (const Error&) {
    }
    transport->close();
}

}  // namespace ioda
