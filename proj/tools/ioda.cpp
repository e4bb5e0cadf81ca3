// ioda: scenario runner and inspection console.
//
//   ioda run <file> [--transport inproc|tcp] [--json]
//   ioda verify <file> --circuit <name> [--json]
//   ioda resolve <file> --from <domain/gate> --selector <json> [--json]
//   ioda query <file> --oport <domain/gate/oport> --as <principal> [--json]
//   ioda trace <file> --record <id> [--json]
//
// Exit codes: 0 success, 1 failed expectation/verification/lookup, 2 usage or
// configuration error. IODA_LOG={error,info,debug} controls stderr verbosity.

#include <iostream>

#include <CLI11.hpp>

#include "ioda/harness.hpp"

using namespace ioda;

namespace {

// Brings a deployment to its post-workload state without checking
// expectations: circuits live, ingest/fault/reconnect steps applied. Used by
// the inspection commands (resolve/query/trace).
struct LiveScenario {
    ScenarioConfig cfg;
    Deployment dep;
    std::map<std::string, std::unique_ptr<Circuit>> circuits;

    explicit LiveScenario(ScenarioConfig c)
        : cfg(std::move(c)), dep(cfg, TransportKind::Inproc) {
        VerifyEnv env = dep.verify_env();
        for (const auto& spec : cfg.circuits) {
            try {
                circuits[spec.name] = activate(spec, env, dep);
            } catch (const ActivationFailed&) {
                // inspection proceeds without the broken circuit
            }
        }
        IdGen ids(cfg.seed);
        for (const auto& step : cfg.workload) {
            switch (step.action) {
                case WorkloadStep::Action::Ingest: {
                    Batch batch;
                    for (std::size_t i = 0; i < step.payloads.size(); ++i)
                        batch.push_back(
                            make_source_record(ids, step.ts[i], step.payloads[i]));
                    dep.local_gate(step.gate)->ingest(step.iport, batch);
                    break;
                }
                case WorkloadStep::Action::Fault:
                    if (auto it = circuits.find(step.circuit); it != circuits.end())
                        it->second->inject_fault(step.edge);
                    break;
                case WorkloadStep::Action::Reconnect:
                    if (auto it = circuits.find(step.circuit); it != circuits.end())
                        it->second->reconnect(step.edge);
                    break;
                default:
                    break;  // expectations are `ioda run`'s business
            }
        }
        for (auto& [_, c] : circuits) c->drain();
        // materializing every view forces derived records (and their
        // provenance entries) into existence before any inspection
        for (const auto& g : cfg.gates)
            for (const auto& op : g.oports)
                dep.local_gate(g.address)->materialize(op.name);
    }

    ~LiveScenario() {
        for (auto& [_, c] : circuits) c->stop();
    }
};

int cmd_run(const std::string& file, const std::string& transport, bool json) {
    ScenarioConfig cfg = load_scenario(file);
    TransportKind kind =
        transport == "tcp" ? TransportKind::Tcp : TransportKind::Inproc;
    RunReport report = run_scenario(cfg, kind);
    if (json)
        std::cout << report.to_json().dump(2) << "\n";
    else
        std::cout << report.to_text();
    return report.ok() ? 0 : 1;
}

int cmd_verify(const std::string& file, const std::string& circuit, bool json) {
    ScenarioConfig cfg = load_scenario(file);
    const CircuitSpec* spec = nullptr;
    for (const auto& c : cfg.circuits)
        if (c.name == circuit) spec = &c;
    if (!spec) throw ValidationError("no circuit named '" + circuit + "'");
    Deployment dep(cfg, TransportKind::Inproc);
    VerificationReport report = verify(*spec, dep.verify_env());
    if (json)
        std::cout << report.to_json().dump(2) << "\n";
    else
        std::cout << report.to_text();
    return report.passed() ? 0 : 1;
}

int cmd_resolve(const std::string& file, const std::string& from,
                const std::string& selector_json, bool json) {
    ScenarioConfig cfg = load_scenario(file);
    Value sj = Value::parse(selector_json, nullptr, false);
    if (sj.is_discarded()) throw ParseError("selector is not valid JSON");
    Selector sel = selector_from_json(sj);
    LiveScenario live(std::move(cfg));
    try {
        GateAddress addr = live.dep.resolve_for(parse_address(from), sel);
        if (json)
            std::cout << Value{{"resolved", format_address(addr)}}.dump(2) << "\n";
        else
            std::cout << format_address(addr) << "\n";
        return 0;
    } catch (const NotFound& e) {
        if (json)
            std::cout << Value{{"error", e.code()}, {"message", e.what()}}.dump(2)
                      << "\n";
        else
            std::cout << e.what() << "\n";
        return 1;
    }
}

int cmd_query(const std::string& file, const std::string& oport,
              const std::string& as, bool json) {
    ScenarioConfig cfg = load_scenario(file);
    GateAddress addr = parse_address(oport);
    if (!addr.oport) throw ValidationError("--oport must be domain/gate/oport");
    if (!cfg.principals.contains(as))
        throw ValidationError("no principal named '" + as + "'");
    LiveScenario live(std::move(cfg));
    Gate* g = live.dep.local_gate(addr);
    if (!g) throw ValidationError("no gate at '" + format_address(addr) + "'");
    try {
        Batch result = g->query(*addr.oport, live.cfg.principals.at(as));
        if (json) {
            Value arr = Value::array();
            for (const auto& r : result) arr.push_back(to_json(r));
            std::cout << arr.dump(2) << "\n";
        } else {
            for (const auto& r : result) std::cout << to_canonical(r) << "\n";
        }
        return 0;
    } catch (const AccessDenied& e) {
        if (json)
            std::cout << Value{{"error", e.code()}, {"message", e.what()}}.dump(2)
                      << "\n";
        else
            std::cout << e.what() << "\n";
        return 1;
    }
}

int cmd_trace(const std::string& file, const std::string& record, bool json) {
    ScenarioConfig cfg = load_scenario(file);
    LiveScenario live(std::move(cfg));
    ProvenanceLedger merged = live.dep.merged_ledger();
    try {
        TraceResult t = merged.trace(record);
        if (json) {
            Value nodes = Value::object();
            for (const auto& [id, entry] : t.nodes) {
                if (!entry) {
                    nodes[id] = nullptr;
                    continue;
                }
                Value lin = Value::array();
                for (const auto& l : entry->lineage) lin.push_back(l);
                nodes[id] = {{"gate", format_address(entry->gate)},
                             {"iport", entry->iport},
                             {"ts", entry->ts},
                             {"lineage", lin}};
            }
            Value leaves = Value::array();
            for (const auto& l : t.leaves) leaves.push_back(l);
            std::cout << Value{{"record", record},
                              {"nodes", nodes},
                              {"leaves", leaves}}
                             .dump(2)
                      << "\n";
        } else {
            std::cout << "record " << record << "\n";
            for (const auto& [parent, child] : t.edges)
                std::cout << "  " << parent << " <- " << child << "\n";
            std::cout << "sources:";
            for (const auto& l : t.leaves) std::cout << " " << l;
            std::cout << "\n";
        }
        return 0;
    } catch (const UnknownRecord& e) {
        if (json)
            std::cout << Value{{"error", e.code()}, {"message", e.what()}}.dump(2)
                      << "\n";
        else
            std::cout << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated data-gateway scenario console"};
    app.require_subcommand(1);
    bool json = false;
    app.add_flag("--json", json, "machine-readable output");

    std::string file, transport = "inproc", circuit, from, selector, oport, as,
                      record;

    auto* run = app.add_subcommand("run", "execute a scenario end to end");
    run->add_option("file", file)->required();
    run->add_option("--transport", transport)
        ->check(CLI::IsMember({"inproc", "tcp"}));

    auto* ver = app.add_subcommand("verify", "verify one circuit");
    ver->add_option("file", file)->required();
    ver->add_option("--circuit", circuit)->required();

    auto* res = app.add_subcommand("resolve", "resolve a selector for a gate");
    res->add_option("file", file)->required();
    res->add_option("--from", from)->required();
    res->add_option("--selector", selector)->required();

    auto* qry = app.add_subcommand("query", "query an oport view");
    qry->add_option("file", file)->required();
    qry->add_option("--oport", oport)->required();
    qry->add_option("--as", as)->required();

    auto* trc = app.add_subcommand("trace", "trace a record's provenance");
    trc->add_option("file", file)->required();
    trc->add_option("--record", record)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) return cmd_run(file, transport, json);
        if (ver->parsed()) return cmd_verify(file, circuit, json);
        if (res->parsed()) return cmd_resolve(file, from, selector, json);
        if (qry->parsed()) return cmd_query(file, oport, as, json);
        if (trc->parsed()) return cmd_trace(file, record, json);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
