#include "ioda/harness.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace ioda {

namespace {

int log_level() {
    static int level = [] {
        const char* env = std::getenv("IODA_LOG");
        if (!env) return 1;
        std::string s = env;
        if (s == "error") return 0;
        if (s == "debug") return 2;
        return 1;
    }();
    return level;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[ioda] " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[ioda:debug] " << msg << "\n";
}

WorkloadStep::Action action_from_string(const std::string& s) {
    if (s == "ingest") return WorkloadStep::Action::Ingest;
    if (s == "expect_view") return WorkloadStep::Action::ExpectView;
    if (s == "query") return WorkloadStep::Action::Query;
    if (s == "fault") return WorkloadStep::Action::Fault;
    if (s == "reconnect") return WorkloadStep::Action::Reconnect;
    if (s == "trace") return WorkloadStep::Action::Trace;
    throw ParseError("unknown workload action '" + s + "'");
}

GovernanceRule rule_from_json(const Value& j) {
    std::string kind = j.at("rule").get<std::string>();
    if (kind == "max_lineage_depth")
        return MaxLineageDepthRule{j.at("n").get<int>()};
    if (kind == "require_field")
        return RequireFieldRule{j.at("oport").get<std::string>(),
                                j.at("field").get<std::string>()};
    if (kind == "forbid_export_tag")
        return ForbidExportTagRule{j.at("tag").get<std::string>()};
    throw ParseError("unknown governance rule '" + kind + "'");
}

}  // namespace

ScenarioConfig scenario_from_json(const Value& j) {
    ScenarioConfig cfg;
    cfg.name = j.value("name", "scenario");
    cfg.seed = j.value("seed", 1u);

    if (!j.contains("domains") || !j.at("domains").is_array() ||
        j.at("domains").empty())
        throw ValidationError("scenario needs a non-empty domains list");
    for (const auto& d : j.at("domains")) {
        std::string name = d.at("name").get<std::string>();
        std::vector<std::string> peers;
        for (const auto& p : d.value("peers", Value::array()))
            peers.push_back(p.get<std::string>());
        cfg.domains.emplace_back(name, peers);
    }

    for (const auto& g : j.value("gates", Value::array()))
        cfg.gates.push_back(gate_spec_from_json(g));

    const Value identities = j.value("identities", Value::object());
    for (const auto& [addr, e] : identities.items()) {
        IdentityConfig ic;
        ic.seed = e.at("seed").get<std::string>();
        ic.register_seed = e.value("register_seed", "");
        cfg.identities[addr] = ic;
    }

    const Value principals = j.value("principals", Value::object());
    for (const auto& [name, p] : principals.items())
        cfg.principals[name] = principal_from_json(p);

    for (const auto& c : j.value("circuits", Value::array()))
        cfg.circuits.push_back(circuit_spec_from_json(c));

    for (const auto& r : j.value("rules", Value::array()))
        cfg.rules.push_back(rule_from_json(r));

    int prev_step = 0;
    for (const auto& s : j.value("workload", Value::array())) {
        WorkloadStep step;
        step.action = action_from_string(s.at("action").get<std::string>());
        step.step = s.value("step", prev_step);
        if (step.step < prev_step)
            throw ValidationError("workload steps must be non-decreasing");
        prev_step = step.step;
        switch (step.action) {
            case WorkloadStep::Action::Ingest: {
                step.gate = parse_address(s.at("gate").get<std::string>());
                step.iport = s.at("iport").get<std::string>();
                for (const auto& r : s.at("records")) {
                    if (r.is_object() && r.contains("payload")) {
                        step.payloads.push_back(r.at("payload"));
                        step.ts.push_back(r.value("ts", std::int64_t{step.step}));
                    } else {
                        step.payloads.push_back(r);
                        step.ts.push_back(step.step);
                    }
                }
                break;
            }
            case WorkloadStep::Action::ExpectView: {
                step.oport_addr = parse_address(s.at("oport").get<std::string>());
                for (const auto& p : s.at("payloads")) step.payloads.push_back(p);
                break;
            }
            case WorkloadStep::Action::Query: {
                step.oport_addr = parse_address(s.at("oport").get<std::string>());
                step.principal = s.at("as").get<std::string>();
                if (s.contains("filter")) {
                    Value arr = Value::array();
                    arr.push_back(s.at("filter"));
                    step.filter = std::get<FilterOp>(
                        dataflow_from_json(arr).stages.at(0));
                }
                if (s.contains("expect"))
                    for (const auto& p : s.at("expect")) step.payloads.push_back(p);
                if (s.contains("expect_error"))
                    step.expect_error = s.at("expect_error").get<std::string>();
                break;
            }
            case WorkloadStep::Action::Fault:
            case WorkloadStep::Action::Reconnect: {
                step.circuit = s.at("circuit").get<std::string>();
                step.edge = s.at("edge").get<std::size_t>();
                break;
            }
            case WorkloadStep::Action::Trace: {
                step.oport_addr = parse_address(s.at("oport").get<std::string>());
                step.record_index = s.value("index", 0u);
                if (s.contains("expect_leaves"))
                    step.expect_leaves = s.at("expect_leaves").get<std::size_t>();
                break;
            }
        }
        cfg.workload.push_back(std::move(step));
    }

    // cross-validation: every reference must name something defined above
    std::set<std::string> domain_names;
    for (const auto& [name, _] : cfg.domains)
        if (!domain_names.insert(name).second)
            throw ValidationError("duplicate domain '" + name + "'");
    for (const auto& [name, peers] : cfg.domains)
        for (const auto& p : peers)
            if (!domain_names.contains(p))
                throw ValidationError("domain '" + name + "' peers with undefined '" +
                                      p + "'");
    std::set<std::string> gate_names;
    for (const auto& g : cfg.gates) {
        if (!domain_names.contains(g.address.domain))
            throw ValidationError("gate '" + format_address(g.address) +
                                  "' lives in undefined domain");
        if (!gate_names.insert(format_address(g.address)).second)
            throw ValidationError("duplicate gate '" + format_address(g.address) + "'");
    }
    auto require_gate = [&](const GateAddress& a, const std::string& where) {
        if (!gate_names.contains(format_address(a.gate_only())))
            throw ValidationError(where + " references undefined gate '" +
                                  format_address(a.gate_only()) + "'");
    };
    auto require_oport = [&](const GateAddress& a, const std::string& where) {
        require_gate(a, where);
        if (!a.oport) throw ValidationError(where + " must name an oport");
        for (const auto& g : cfg.gates)
            if (g.address == a.gate_only()) {
                for (const auto& op : g.oports)
                    if (op.name == *a.oport) return;
                throw ValidationError(where + " references undefined oport '" +
                                      format_address(a) + "'");
            }
    };
    for (const auto& [addr, _] : cfg.identities)
        require_gate(parse_address(addr), "identities");
    std::set<std::string> circuit_names;
    for (const auto& c : cfg.circuits) {
        if (!circuit_names.insert(c.name).second)
            throw ValidationError("duplicate circuit '" + c.name + "'");
        for (const auto& e : c.edges) {
            require_oport(e.from, "circuit '" + c.name + "'");
            require_gate(e.to_gate, "circuit '" + c.name + "'");
        }
    }
    std::size_t idx = 0;
    for (const auto& s : cfg.workload) {
        std::string where = "workload step " + std::to_string(idx++);
        switch (s.action) {
            case WorkloadStep::Action::Ingest:
                require_gate(s.gate, where);
                break;
            case WorkloadStep::Action::ExpectView:
            case WorkloadStep::Action::Trace:
                require_oport(s.oport_addr, where);
                break;
            case WorkloadStep::Action::Query:
                require_oport(s.oport_addr, where);
                if (!cfg.principals.contains(s.principal))
                    throw ValidationError(where + " references undefined principal '" +
                                          s.principal + "'");
                break;
            case WorkloadStep::Action::Fault:
            case WorkloadStep::Action::Reconnect:
                if (!circuit_names.contains(s.circuit))
                    throw ValidationError(where + " references undefined circuit '" +
                                          s.circuit + "'");
                break;
        }
    }
    return cfg;
}

ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open scenario file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    Value j = Value::parse(buf.str(), nullptr, false);
    if (j.is_discarded()) throw ParseError("invalid JSON in '" + path + "'");
    return scenario_from_json(j);
}

// ---------------------------------------------------------------------------
// Deployment

struct Deployment::GateHost {
    std::unique_ptr<Gate> gate;
    GateIdentity identity;
    ServeContext serve_ctx;
    std::unique_ptr<TcpListener> listener;
    std::thread acceptor;
    std::mutex mu;
    std::vector<std::thread> session_threads;
    std::vector<std::weak_ptr<Transport>> transports;

    void spawn_session(std::shared_ptr<Transport> transport) {
        std::lock_guard lock(mu);
        transports.push_back(transport);
        session_threads.emplace_back(
            [transport, ctx = serve_ctx] { serve_session(transport, ctx); });
    }

    void shutdown() {
        if (listener) listener->close();
        if (acceptor.joinable()) acceptor.join();
        std::lock_guard lock(mu);
        for (auto& w : transports)
            if (auto t = w.lock()) t->close();
        for (auto& th : session_threads)
            if (th.joinable()) th.join();
        session_threads.clear();
    }
};

Deployment::Deployment(const ScenarioConfig& config, TransportKind transport)
    : config_(config), transport_(transport) {
    for (const auto& [name, _] : config_.domains) {
        registries_[name] = std::make_unique<DomainRegistry>(name);
        ledgers_[name] = std::make_unique<ProvenanceLedger>();
    }
    for (const auto& [name, peers] : config_.domains) {
        PeeringTable table;
        for (const auto& p : peers)
            table.peers[p] = make_local_client(*registries_.at(p));
        peerings_[name] = std::move(table);
    }

    auto lookup = identity_lookup();
    for (const auto& spec : config_.gates) {
        auto host = std::make_unique<GateHost>();
        std::string addr = format_address(spec.address);

        std::string seed = "ioda-key:" + addr;
        std::string register_seed = seed;
        if (auto it = config_.identities.find(addr); it != config_.identities.end()) {
            seed = it->second.seed;
            register_seed = it->second.register_seed.empty() ? it->second.seed
                                                             : it->second.register_seed;
        }
        KeyPair kp = keypair_from_seed(seed);
        KeyPair registered = keypair_from_seed(register_seed);
        host->identity = {spec.address.gate_only(), kp.verify_key_hex,
                          kp.signing_key_hex};

        host->gate = create_gate(spec, ledgers_.at(spec.address.domain).get());
        registries_.at(spec.address.domain)
            ->register_gate(spec.metadata, registered.verify_key_hex);

        host->serve_ctx.gate = host->gate.get();
        host->serve_ctx.identity = host->identity;
        host->serve_ctx.identity_lookup = lookup;
        host->serve_ctx.registry = registries_.at(spec.address.domain).get();
        host->serve_ctx.peering = &peerings_.at(spec.address.domain);

        if (transport_ == TransportKind::Tcp) {
            host->listener = make_tcp_listener(0);
            GateHost* raw = host.get();
            host->acceptor = std::thread([raw] {
                try {
                    while (true) raw->spawn_session(raw->listener->accept());
                } catch (const TransportClosed&) {
                }
            });
            log_debug("gate " + addr + " listening on 127.0.0.1:" +
                      std::to_string(host->listener->port()));
        }
        gates_[addr] = std::move(host);
    }
    log_info("deployment up: " + std::to_string(gates_.size()) + " gates, " +
             std::to_string(registries_.size()) + " domains");
}

Deployment::~Deployment() {
    for (auto& [_, host] : gates_) host->shutdown();
}

Gate* Deployment::local_gate(const GateAddress& gate) {
    auto it = gates_.find(format_address(gate.gate_only()));
    return it == gates_.end() ? nullptr : it->second->gate.get();
}

std::unique_ptr<WireSession> Deployment::connect(const GateAddress& dst_gate,
                                                 const GateAddress& src_gate) {
    auto dst = gates_.find(format_address(dst_gate.gate_only()));
    auto src = gates_.find(format_address(src_gate.gate_only()));
    if (dst == gates_.end() || src == gates_.end())
        throw NotFound("unknown gate in connect()");
    std::shared_ptr<Transport> client_end;
    if (transport_ == TransportKind::Inproc) {
        auto [a, b] = make_inproc_pair();
        client_end = a;
        src->second->spawn_session(b);
    } else {
        client_end = tcp_connect("127.0.0.1", src->second->listener->port());
    }
    return establish(dst->second->identity, client_end, src_gate.gate_only(),
                     identity_lookup());
}

DomainRegistry* Deployment::registry(const std::string& domain) {
    auto it = registries_.find(domain);
    return it == registries_.end() ? nullptr : it->second.get();
}

const PeeringTable& Deployment::peering(const std::string& domain) const {
    return peerings_.at(domain);
}

ProvenanceLedger* Deployment::domain_ledger(const std::string& domain) {
    auto it = ledgers_.find(domain);
    return it == ledgers_.end() ? nullptr : it->second.get();
}

ProvenanceLedger Deployment::merged_ledger() const {
    ProvenanceLedger merged;
    for (const auto& [_, l] : ledgers_) merged.merge(*l);
    return merged;
}

const GateIdentity& Deployment::identity(const GateAddress& gate) const {
    return gates_.at(format_address(gate.gate_only()))->identity;
}

IdentityLookup Deployment::identity_lookup() const {
    return [this](const GateAddress& addr) -> std::optional<std::string> {
        auto it = registries_.find(addr.domain);
        if (it == registries_.end()) return std::nullopt;
        return it->second->lookup_key(addr.gate);
    };
}

VerifyEnv Deployment::verify_env() const {
    VerifyEnv env;
    for (const auto& [name, reg] : registries_) env.registries[name] = reg.get();
    env.gate_spec = [this](const GateAddress& a) -> const GateSpec* {
        auto it = gates_.find(format_address(a.gate_only()));
        return it == gates_.end() ? nullptr : &it->second->gate->spec();
    };
    env.policy = [this](const GateAddress& a) -> const Policy* {
        auto it = gates_.find(format_address(a.gate_only()));
        if (it == gates_.end() || !a.oport) return nullptr;
        const OPortSpec* op = it->second->gate->find_oport(*a.oport);
        return op ? &op->policy : nullptr;
    };
    return env;
}

GateAddress Deployment::resolve_for(const GateAddress& requester_gate,
                                    const Selector& sel) {
    Gate* g = local_gate(requester_gate);
    if (!g) throw NotFound("unknown requester gate");
    const std::string& domain = requester_gate.domain;
    return resolve_cross(*registries_.at(domain), peerings_.at(domain),
                         g->metadata(), sel);
}

// ---------------------------------------------------------------------------
// Runner

std::string view_digest(const std::vector<DataRecord>& records) {
    std::string buf;
    for (const auto& r : records) {
        buf += to_canonical(r);
        buf += '\n';
    }
    return sha256_hex(buf);
}

bool RunReport::ok() const {
    for (const auto& s : steps)
        if (!s.ok) return false;
    for (const auto& [_, v] : verifications)
        if (!v.value("passed", false)) return false;
    return activation_errors.empty();
}

Value RunReport::to_json() const {
    Value j;
    j["ok"] = ok();
    Value steps_json = Value::array();
    for (const auto& s : steps)
        steps_json.push_back({{"index", s.index},
                              {"action", s.action},
                              {"ok", s.ok},
                              {"detail", s.detail}});
    j["steps"] = steps_json;
    j["verifications"] = Value::object();
    for (const auto& [name, v] : verifications) j["verifications"][name] = v;
    j["activation_errors"] = Value::object();
    for (const auto& [name, e] : activation_errors) j["activation_errors"][name] = e;
    j["view_digests"] = Value::object();
    for (const auto& [name, d] : view_digests) j["view_digests"][name] = d;
    j["view_records"] = Value::object();
    for (const auto& [name, ids] : view_records) {
        Value arr = Value::array();
        for (const auto& id : ids) arr.push_back(id);
        j["view_records"][name] = arr;
    }
    j["audit"] = audit;
    return j;
}

std::string RunReport::to_text() const {
    std::ostringstream out;
    for (const auto& s : steps) {
        out << (s.ok ? "ok  " : "FAIL") << "  step " << s.index << " " << s.action;
        if (!s.detail.empty()) out << ": " << s.detail;
        out << "\n";
    }
    for (const auto& [name, e] : activation_errors)
        out << "FAIL  circuit " << name << ": " << e << "\n";
    for (const auto& [name, v] : verifications)
        if (!v.value("passed", false))
            out << "FAIL  verification " << name << "\n";
    if (!audit.empty()) out << "audit violations: " << audit.dump() << "\n";
    out << (ok() ? "run passed" : "run failed") << "\n";
    return out.str();
}

RunReport run_scenario(const ScenarioConfig& config, TransportKind transport) {
    RunReport report;
    Deployment dep(config, transport);
    IdGen ids(config.seed);
    VerifyEnv env = dep.verify_env();

    std::map<std::string, std::unique_ptr<Circuit>> circuits;
    for (const auto& spec : config.circuits) {
        VerificationReport vr = verify(spec, env);
        report.verifications[spec.name] = vr.to_json();
        if (!vr.passed()) continue;
        try {
            circuits[spec.name] = activate(spec, env, dep);
            log_info("circuit '" + spec.name + "' running");
        } catch (const ActivationFailed& e) {
            report.activation_errors[spec.name] = e.what();
        }
    }

    auto drain_all = [&] {
        for (auto& [_, c] : circuits) c->drain();
    };

    std::size_t index = 0;
    for (const auto& step : config.workload) {
        StepOutcome outcome;
        outcome.index = index++;
        try {
            switch (step.action) {
                case WorkloadStep::Action::Ingest: {
                    outcome.action = "ingest";
                    Gate* g = dep.local_gate(step.gate);
                    Batch batch;
                    for (std::size_t i = 0; i < step.payloads.size(); ++i)
                        batch.push_back(
                            make_source_record(ids, step.ts[i], step.payloads[i]));
                    IngestReport r = g->ingest(step.iport, batch);
                    outcome.detail = "accepted=" + std::to_string(r.accepted) +
                                     " derived=" + std::to_string(r.derived);
                    break;
                }
                case WorkloadStep::Action::ExpectView: {
                    outcome.action = "expect_view";
                    Gate* g = dep.local_gate(step.oport_addr);
                    auto deadline = std::chrono::steady_clock::now() +
                                    std::chrono::seconds(5);
                    bool matched = false;
                    Value got;
                    while (std::chrono::steady_clock::now() < deadline) {
                        OPortView view = g->materialize(*step.oport_addr.oport);
                        got = Value::array();
                        for (const auto& r : view.records) got.push_back(r.payload);
                        Value want = Value::array();
                        for (const auto& p : step.payloads) want.push_back(p);
                        if (got == want) {
                            matched = true;
                            break;
                        }
                        std::this_thread::sleep_for(std::chrono::milliseconds(20));
                    }
                    outcome.ok = matched;
                    if (!matched)
                        outcome.detail = "view mismatch, got " + got.dump();
                    break;
                }
                case WorkloadStep::Action::Query: {
                    outcome.action = "query";
                    drain_all();
                    Gate* g = dep.local_gate(step.oport_addr);
                    const Principal& p = config.principals.at(step.principal);
                    try {
                        Batch result =
                            g->query(*step.oport_addr.oport, p, step.filter);
                        if (step.expect_error) {
                            outcome.ok = false;
                            outcome.detail = "expected " + *step.expect_error;
                        } else if (!step.payloads.empty()) {
                            Value got = Value::array();
                            for (const auto& r : result) got.push_back(r.payload);
                            Value want = Value::array();
                            for (const auto& pl : step.payloads) want.push_back(pl);
                            outcome.ok = got == want;
                            if (!outcome.ok)
                                outcome.detail = "query mismatch, got " + got.dump();
                        } else {
                            outcome.detail =
                                std::to_string(result.size()) + " records";
                        }
                    } catch (const Error& e) {
                        if (step.expect_error && e.code() == *step.expect_error) {
                            outcome.detail = "got expected " + e.code();
                        } else {
                            throw;
                        }
                    }
                    break;
                }
                case WorkloadStep::Action::Fault: {
                    outcome.action = "fault";
                    circuits.at(step.circuit)->inject_fault(step.edge);
                    break;
                }
                case WorkloadStep::Action::Reconnect: {
                    outcome.action = "reconnect";
                    circuits.at(step.circuit)->reconnect(step.edge);
                    break;
                }
                case WorkloadStep::Action::Trace: {
                    outcome.action = "trace";
                    drain_all();
                    Gate* g = dep.local_gate(step.oport_addr);
                    OPortView view = g->materialize(*step.oport_addr.oport);
                    if (step.record_index >= view.records.size())
                        throw ValidationError("trace index out of range");
                    RecordId id = view.records[step.record_index].id;
                    ProvenanceLedger merged = dep.merged_ledger();
                    TraceResult t = merged.trace(id);
                    outcome.detail = "record " + id + ": " +
                                     std::to_string(t.leaves.size()) + " sources";
                    if (step.expect_leaves) {
                        outcome.ok = t.leaves.size() == *step.expect_leaves;
                        if (!outcome.ok)
                            outcome.detail += ", expected " +
                                              std::to_string(*step.expect_leaves);
                    }
                    break;
                }
            }
        } catch (const Error& e) {
            outcome.ok = false;
            outcome.detail = e.what();
        }
        log_debug("step " + std::to_string(outcome.index) + " " + outcome.action +
                  (outcome.ok ? " ok" : " FAILED"));
        report.steps.push_back(std::move(outcome));
    }

    drain_all();
    for (const auto& spec : config.gates) {
        Gate* g = dep.local_gate(spec.address);
        for (const auto& op : spec.oports) {
            OPortView view = g->materialize(op.name);
            std::string key = format_address(spec.address.with_oport(op.name));
            report.view_digests[key] = view_digest(view.records);
            for (const auto& r : view.records)
                report.view_records[key].push_back(r.id);
        }
    }

    if (!config.rules.empty()) {
        std::vector<GateMetadata> metas;
        for (const auto& g : config.gates) metas.push_back(g.metadata);
        ProvenanceLedger merged = dep.merged_ledger();
        report.audit = violations_to_json(audit(config.rules, metas, merged));
    }

    for (auto& [_, c] : circuits) c->stop();
    return report;
}

}  // namespace ioda
