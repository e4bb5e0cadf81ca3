#pragma once

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "ioda/gate.hpp"
#include "ioda/resolution.hpp"
#include "ioda/wire.hpp"

namespace ioda {

struct CircuitEdge {
    GateAddress from;     // oport address (domain/gate/oport)
    GateAddress to_gate;  // domain/gate
    std::string to_iport;

    bool operator==(const CircuitEdge&) const = default;
};

struct CircuitSpec {
    std::string name;
    std::vector<CircuitEdge> edges;

    std::set<std::string> domains() const;
    // Throws InvalidSpec on malformed endpoints or duplicate edges.
    void validate() const;
};

Value circuit_spec_to_json(const CircuitSpec& s);
CircuitSpec circuit_spec_from_json(const Value& j);

struct CheckResult {
    std::string check;  // "resolvable", "acyclic", "schema", "exported", "permission"
    bool passed = true;
    std::vector<std::string> failures;
};

struct VerificationReport {
    std::vector<CheckResult> checks;

    bool passed() const;
    const CheckResult* check(const std::string& name) const;
    Value to_json() const;
    std::string to_text() const;
};

// What verify/activate need to know about the deployment.
struct VerifyEnv {
    std::map<std::string, const DomainRegistry*> registries;
    // oport address -> its policy; nullptr when unknown
    std::function<const Policy*(const GateAddress&)> policy;
    // domain/gate -> gate spec; nullptr when the gate is not hosted here
    std::function<const GateSpec*(const GateAddress&)> gate_spec;
};

// Five checks: endpoints resolvable, gate graph acyclic, source schema
// compatible with the first destination dataflow stage, cross-domain edges
// exported, destination principal granted watch. Intra- and inter-domain
// edges go through identical code paths apart from the export check.
VerificationReport verify(const CircuitSpec& spec, const VerifyEnv& env);

// Opens authenticated sessions on behalf of circuit edges.
class EdgeConnector {
public:
    virtual ~EdgeConnector() = default;
    virtual std::unique_ptr<WireSession> connect(const GateAddress& dst_gate,
                                                 const GateAddress& src_gate) = 0;
    virtual Gate* local_gate(const GateAddress& gate) = 0;
};

enum class EdgeState { Open, Degraded, Closed };

struct CircuitStatus {
    bool running = false;
    struct Edge {
        CircuitEdge edge;
        EdgeState state = EdgeState::Closed;
        std::uint64_t high_water = 0;  // highest acknowledged event seq
    };
    std::vector<Edge> edges;
    std::map<std::string, bool> gate_live;  // formatted domain/gate -> liveness
};

// A running circuit: every edge holds a wire subscription on its source
// oport and feeds the destination iport. Events are acknowledged after
// ingest; reconnects resume from the high-water mark.
class Circuit {
public:
    ~Circuit();

    const CircuitSpec& spec() const { return spec_; }
    CircuitStatus status() const;

    // Closes the edge's transport; the edge reports Degraded until reconnect.
    void inject_fault(std::size_t edge_index);
    // Re-establishes the edge session, resuming above the high-water mark.
    void reconnect(std::size_t edge_index);

    // Blocks until every open edge has drained its pending events (the
    // subscription queue is empty and all seen seqs are acked).
    void drain(int timeout_ms = 5000);

    void stop();

private:
    friend std::unique_ptr<Circuit> activate(const CircuitSpec&, const VerifyEnv&,
                                             EdgeConnector&);
    Circuit(CircuitSpec spec, EdgeConnector& connector);

    struct EdgeRuntime {
        CircuitEdge edge;
        std::unique_ptr<WireSession> session;
        std::shared_ptr<RemoteSubscription> sub;
        std::thread pump;
        std::uint64_t high_water = 0;
        EdgeState state = EdgeState::Closed;
        std::atomic<bool> busy{false};
    };

    void start_edge(EdgeRuntime& er, std::uint64_t from_seq);
    void pump_edge(EdgeRuntime& er);

    CircuitSpec spec_;
    EdgeConnector& connector_;
    mutable std::mutex mu_;
    std::vector<std::unique_ptr<EdgeRuntime>> edges_;
    std::atomic<bool> running_{false};
};

// Verifies first; throws ActivationFailed (after rolling back any opened
// sessions) when verification or any edge setup fails.
std::unique_ptr<Circuit> activate(const CircuitSpec& spec, const VerifyEnv& env,
                                  EdgeConnector& connector);

}  // namespace ioda
