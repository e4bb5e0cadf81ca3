#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ioda/circuit.hpp"
#include "ioda/gate.hpp"
#include "ioda/governance.hpp"
#include "ioda/resolution.hpp"
#include "ioda/wire.hpp"

namespace ioda {

enum class TransportKind { Inproc, Tcp };

// One workload step; `action` selects which fields apply.
struct WorkloadStep {
    enum class Action { Ingest, ExpectView, Query, Fault, Reconnect, Trace };
    Action action = Action::Ingest;
    int step = 0;  // virtual time, non-decreasing across the workload

    GateAddress gate;                  // ingest
    std::string iport;                 // ingest
    std::vector<Value> payloads;       // ingest inputs / expected view payloads
    std::vector<std::int64_t> ts;      // per-record timestamps (ingest)

    GateAddress oport_addr;            // expect_view / query / trace
    std::string principal;             // query: named principal
    std::optional<FilterOp> filter;    // query
    std::optional<std::string> expect_error;  // query: expected error code

    std::string circuit;               // fault / reconnect
    std::size_t edge = 0;              // fault / reconnect

    std::size_t record_index = 0;          // trace: index into the oport view
    std::optional<std::size_t> expect_leaves;  // trace: expected source count
};

struct IdentityConfig {
    std::string seed;           // signing keypair seed
    std::string register_seed;  // key registered in the GRS; empty = same
};

struct ScenarioConfig {
    std::string name;
    std::uint64_t seed = 1;
    std::vector<std::pair<std::string, std::vector<std::string>>> domains;  // name, peers
    std::vector<GateSpec> gates;
    std::map<std::string, IdentityConfig> identities;  // formatted gate address
    std::map<std::string, Principal> principals;
    std::vector<CircuitSpec> circuits;
    std::vector<GovernanceRule> rules;
    std::vector<WorkloadStep> workload;
};

// Parses and cross-validates; throws ParseError / ValidationError before any
// side effect.
ScenarioConfig load_scenario(const std::string& path);
ScenarioConfig scenario_from_json(const Value& j);

// A single-process multi-provider deployment: one registry, ledger, and
// peering table per domain, one live gate per spec, servers on the chosen
// transport.
class Deployment : public EdgeConnector {
public:
    Deployment(const ScenarioConfig& config, TransportKind transport);
    ~Deployment() override;

    Gate* local_gate(const GateAddress& gate) override;
    std::unique_ptr<WireSession> connect(const GateAddress& dst_gate,
                                         const GateAddress& src_gate) override;

    DomainRegistry* registry(const std::string& domain);
    const PeeringTable& peering(const std::string& domain) const;
    ProvenanceLedger* domain_ledger(const std::string& domain);
    ProvenanceLedger merged_ledger() const;
    const GateIdentity& identity(const GateAddress& gate) const;
    IdentityLookup identity_lookup() const;
    VerifyEnv verify_env() const;

    GateAddress resolve_for(const GateAddress& requester_gate, const Selector& sel);

    const ScenarioConfig& config() const { return config_; }

private:
    struct GateHost;

    ScenarioConfig config_;
    TransportKind transport_;
    std::map<std::string, std::unique_ptr<DomainRegistry>> registries_;
    std::map<std::string, std::unique_ptr<ProvenanceLedger>> ledgers_;
    std::map<std::string, PeeringTable> peerings_;
    std::map<std::string, std::unique_ptr<GateHost>> gates_;  // formatted addr
};

struct StepOutcome {
    std::size_t index = 0;
    std::string action;
    bool ok = true;
    std::string detail;
};

struct RunReport {
    std::vector<StepOutcome> steps;
    std::map<std::string, Value> verifications;  // circuit name -> report json
    std::map<std::string, std::string> activation_errors;  // circuit -> cause
    // formatted oport address -> digest over the final view's canonical records
    std::map<std::string, std::string> view_digests;
    std::map<std::string, std::vector<RecordId>> view_records;
    Value audit = Value::array();

    bool ok() const;
    Value to_json() const;
    std::string to_text() const;
};

RunReport run_scenario(const ScenarioConfig& config, TransportKind transport);

std::string view_digest(const std::vector<DataRecord>& records);

}  // namespace ioda
