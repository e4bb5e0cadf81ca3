#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ioda/gate.hpp"
#include "ioda/resolution.hpp"

namespace ioda {

// ---------------------------------------------------------------------------
// Frames

enum class FrameType {
    Hello,
    Challenge,
    Auth,
    Open,
    Query,
    Result,
    Subscribe,
    Event,
    Ack,
    Resolve,
    Resolved,
    Error,
    Bye,
};

std::string to_string(FrameType t);
FrameType frame_type_from_string(const std::string& s);

constexpr std::size_t kMaxFrameLen = 16u * 1024u * 1024u;

// Wire format, bit-exact: 4-byte big-endian length prefix followed by the
// UTF-8 JSON object {"t": <type>, "sid": <session id>, "body": <object>}.
struct Frame {
    FrameType type = FrameType::Error;
    std::string sid;
    Value body = Value::object();

    bool operator==(const Frame&) const = default;
};

std::string encode_frame(const Frame& f);
// Decodes the JSON payload (without the length prefix). Throws
// ProtocolViolation on malformed input.
Frame decode_frame_payload(const std::string& payload);

// ---------------------------------------------------------------------------
// Transports

// Reliable ordered byte stream.
class Transport {
public:
    virtual ~Transport() = default;
    // Both throw TransportClosed once the stream is down. recv returns
    // exactly n bytes.
    virtual void send(const std::string& bytes) = 0;
    virtual std::string recv(std::size_t n) = 0;
    virtual void close() = 0;
};

void send_frame(Transport& t, const Frame& f);
Frame recv_frame(Transport& t);

// Connected in-process pipe pair.
std::pair<std::shared_ptr<Transport>, std::shared_ptr<Transport>> make_inproc_pair();

class TcpListener {
public:
    virtual ~TcpListener() = default;
    virtual std::uint16_t port() const = 0;
    virtual std::shared_ptr<Transport> accept() = 0;  // throws TransportClosed when shut down
    virtual void close() = 0;
};

std::unique_ptr<TcpListener> make_tcp_listener(std::uint16_t port);  // 0 = ephemeral
std::shared_ptr<Transport> tcp_connect(const std::string& host, std::uint16_t port);

// ---------------------------------------------------------------------------
// Identity

// Ed25519 keypair, hex encoded.
struct KeyPair {
    std::string verify_key_hex;
    std::string signing_key_hex;
};

KeyPair generate_keypair();
KeyPair keypair_from_seed(const std::string& seed);  // deterministic

std::string sign_message(const std::string& message, const std::string& signing_key_hex);
bool verify_signature(const std::string& message, const std::string& signature_hex,
                      const std::string& verify_key_hex);

struct GateIdentity {
    GateAddress address;  // domain/gate
    std::string verify_key_hex;
    std::string signing_key_hex;  // held privately by the gate
};

// Resolves a gate address to its registered verification key.
using IdentityLookup =
    std::function<std::optional<std::string>(const GateAddress&)>;

// ---------------------------------------------------------------------------
// Frame tracing (no-data-before-auth validator)

struct TraceEntry {
    std::string sid;
    std::string dir;  // "send" | "recv"
    FrameType type = FrameType::Error;
};

// Process-global opt-in frame log; every session records its frames here
// while enabled.
class FrameTrace {
public:
    static void enable();
    static void disable();
    static void clear();
    static void log(const std::string& sid, const char* dir, FrameType type);
    static std::vector<TraceEntry> snapshot();
};

// True iff on every session id, any QUERY/SUBSCRIBE/RESOLVE frame is preceded
// by both an AUTH sent and an AUTH received on that session.
bool no_data_before_auth(const std::vector<TraceEntry>& trace);

// ---------------------------------------------------------------------------
// Sessions

class RemoteSubscription {
public:
    ~RemoteSubscription();
    std::optional<Subscription::Event> poll(int timeout_ms = 1000);
    // Acknowledges the cursor to the server and remembers it for reconnects.
    void ack(std::uint64_t seq);
    std::uint64_t acked() const;
    std::size_t pending() const;  // undelivered events queued locally
    bool closed() const;
    void close();

private:
    friend class WireSession;
    RemoteSubscription() = default;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Subscription::Event> queue_;
    std::uint64_t acked_ = 0;
    bool closed_ = false;
    std::shared_ptr<Transport> transport_;
    std::string sid_;
    std::thread pump_;
};

// Client half of an authenticated wire. Data frames only flow once the
// mutual challenge-response handshake has completed.
class WireSession {
public:
    enum class State { Handshaking, Open, Closed };

    ~WireSession();

    State state() const { return state_; }
    const std::string& sid() const { return sid_; }
    const GateAddress& remote_address() const { return remote_; }

    Batch remote_query(const std::string& oport, const Principal& principal,
                       const std::optional<FilterOp>& filter = std::nullopt);

    std::shared_ptr<RemoteSubscription> remote_subscribe(const std::string& oport,
                                                         const Principal& principal,
                                                         std::uint64_t from_seq);

    GateAddress remote_resolve(const GateMetadata& requester, const Selector& sel);

    void close();

private:
    friend std::unique_ptr<WireSession> establish(const GateIdentity&,
                                                  std::shared_ptr<Transport>,
                                                  const GateAddress&,
                                                  const IdentityLookup&);
    WireSession() = default;

    Frame request(const Frame& f);  // single in-flight request/response

    std::shared_ptr<Transport> transport_;
    std::string sid_;
    GateAddress remote_;
    std::atomic<State> state_{State::Handshaking};
    std::mutex mu_;
};

// Initiator-side handshake: HELLO -> CHALLENGE -> AUTH/AUTH -> OPEN. Throws
// AuthFailed when either signature fails to verify, ProtocolViolation on
// out-of-order frames.
std::unique_ptr<WireSession> establish(const GateIdentity& local,
                                       std::shared_ptr<Transport> transport,
                                       const GateAddress& remote_addr,
                                       const IdentityLookup& identity_lookup);

// Everything the responder needs to serve one gate over a transport.
struct ServeContext {
    Gate* gate = nullptr;
    GateIdentity identity;
    IdentityLookup identity_lookup;
    // optional: lets the session answer RESOLVE frames
    const DomainRegistry* registry = nullptr;
    const PeeringTable* peering = nullptr;
};

// Responder loop: handshake, then serve QUERY/SUBSCRIBE/RESOLVE until BYE or
// transport loss. Blocking; run on its own thread.
void serve_session(std::shared_ptr<Transport> transport, const ServeContext& ctx);

}  // namespace ioda
