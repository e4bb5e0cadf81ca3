#include "ioda/circuit.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

namespace ioda {

std::set<std::string> CircuitSpec::domains() const {
    std::set<std::string> out;
    for (const auto& e : edges) {
        out.insert(e.from.domain);
        out.insert(e.to_gate.domain);
    }
    return out;
}

void CircuitSpec::validate() const {
    if (name.empty()) throw InvalidSpec("circuit needs a name");
    std::set<std::string> seen;
    for (const auto& e : edges) {
        if (!e.from.oport) throw InvalidSpec("circuit edge source must name an oport");
        if (e.to_gate.oport)
            throw InvalidSpec("circuit edge destination gate must not name an oport");
        if (!valid_segment(e.to_iport))
            throw InvalidSpec("bad destination iport '" + e.to_iport + "'");
        std::string key = format_address(e.from) + ">" +
                          format_address(e.to_gate) + ":" + e.to_iport;
        if (!seen.insert(key).second)
            throw InvalidSpec("duplicate circuit edge " + key);
    }
}

Value circuit_spec_to_json(const CircuitSpec& s) {
    Value edges = Value::array();
    for (const auto& e : s.edges) {
        edges.push_back({{"from", format_address(e.from)},
                         {"to", {{"gate", format_address(e.to_gate)},
                                 {"iport", e.to_iport}}}});
    }
    return {{"name", s.name}, {"edges", edges}};
}

CircuitSpec circuit_spec_from_json(const Value& j) {
    CircuitSpec s;
    s.name = j.at("name").get<std::string>();
    for (const auto& e : j.at("edges")) {
        CircuitEdge edge;
        edge.from = parse_address(e.at("from").get<std::string>());
        edge.to_gate = parse_address(e.at("to").at("gate").get<std::string>());
        edge.to_iport = e.at("to").at("iport").get<std::string>();
        s.edges.push_back(std::move(edge));
    }
    s.validate();
    return s;
}

bool VerificationReport::passed() const {
    return std::all_of(checks.begin(), checks.end(),
                       [](const CheckResult& c) { return c.passed; });
}

const CheckResult* VerificationReport::check(const std::string& name) const {
    for (const auto& c : checks)
        if (c.check == name) return &c;
    return nullptr;
}

Value VerificationReport::to_json() const {
    Value arr = Value::array();
    for (const auto& c : checks) {
        Value fails = Value::array();
        for (const auto& f : c.failures) fails.push_back(f);
        arr.push_back({{"check", c.check}, {"passed", c.passed}, {"failures", fails}});
    }
    return {{"passed", passed()}, {"checks", arr}};
}

std::string VerificationReport::to_text() const {
    std::ostringstream out;
    for (const auto& c : checks) {
        out << (c.passed ? "PASS" : "FAIL") << "  " << c.check << "\n";
        for (const auto& f : c.failures) out << "      " << f << "\n";
    }
    out << (passed() ? "circuit verification passed" : "circuit verification failed")
        << "\n";
    return out.str();
}

namespace {

std::string edge_name(const CircuitEdge& e) {
    return format_address(e.from) + " -> " + format_address(e.to_gate) + ":" +
           e.to_iport;
}

// gate-level cycle finder; returns a formatted cycle path when one exists
std::optional<std::string> find_cycle(const CircuitSpec& spec) {
    std::map<std::string, std::vector<std::string>> adj;
    for (const auto& e : spec.edges) {
        adj[format_address(e.from.gate_only())].push_back(
            format_address(e.to_gate.gate_only()));
        adj[format_address(e.to_gate.gate_only())];
    }
    std::map<std::string, int> state;  // 0 new, 1 on stack, 2 done
    std::vector<std::string> stack;
    std::optional<std::string> cycle;

    std::function<bool(const std::string&)> dfs = [&](const std::string& u) {
        state[u] = 1;
        stack.push_back(u);
        for (const auto& v : adj[u]) {
            if (state[v] == 1) {
                auto it = std::find(stack.begin(), stack.end(), v);
                std::string path;
                for (; it != stack.end(); ++it) path += *it + " -> ";
                cycle = path + v;
                return true;
            }
            if (state[v] == 0 && dfs(v)) return true;
        }
        stack.pop_back();
        state[u] = 2;
        return false;
    };
    for (const auto& [u, _] : adj)
        if (state[u] == 0 && dfs(u)) return cycle;
    return std::nullopt;
}

// topological positions of gates; only valid for acyclic specs
std::map<std::string, int> topo_positions(const CircuitSpec& spec) {
    std::map<std::string, std::vector<std::string>> adj;
    std::map<std::string, int> indeg;
    for (const auto& e : spec.edges) {
        std::string u = format_address(e.from.gate_only());
        std::string v = format_address(e.to_gate.gate_only());
        adj[u].push_back(v);
        indeg[v]++;
        indeg[u];
    }
    std::vector<std::string> ready;
    for (const auto& [u, d] : indeg)
        if (d == 0) ready.push_back(u);
    std::sort(ready.begin(), ready.end());
    std::map<std::string, int> pos;
    int next = 0;
    while (!ready.empty()) {
        std::string u = ready.front();
        ready.erase(ready.begin());
        pos[u] = next++;
        for (const auto& v : adj[u])
            if (--indeg[v] == 0)
                ready.insert(std::upper_bound(ready.begin(), ready.end(), v), v);
    }
    return pos;
}

struct PathNeed {
    FieldPath path;
    enum class Kind { Any, Scalar, Numeric, Literal } kind = Kind::Any;
    Value literal;
};

std::vector<PathNeed> first_stage_needs(const Dataflow& df) {
    std::vector<PathNeed> needs;
    if (df.stages.empty()) return needs;
    const Operator& op = df.stages.front();
    if (const auto* f = std::get_if<FilterOp>(&op)) {
        needs.push_back({f->path, PathNeed::Kind::Literal, f->literal});
    } else if (const auto* p = std::get_if<ProjectOp>(&op)) {
        for (const auto& path : p->paths)
            needs.push_back({path, PathNeed::Kind::Any, {}});
    } else if (const auto* s = std::get_if<SortOp>(&op)) {
        needs.push_back({s->path, PathNeed::Kind::Scalar, {}});
    } else if (const auto* j = std::get_if<JoinOp>(&op)) {
        needs.push_back({j->left_path, PathNeed::Kind::Scalar, {}});
    } else {
        const auto& w = std::get<WindowOp>(op);
        bool numeric = w.fn != WindowFn::Count;
        needs.push_back({w.path,
                         numeric ? PathNeed::Kind::Numeric : PathNeed::Kind::Any,
                         {}});
    }
    return needs;
}

bool is_numeric_type(FieldType t) {
    return t == FieldType::Int || t == FieldType::Float || t == FieldType::Timestamp;
}

// shallow check: only the first path segment is matched against the schema
std::optional<std::string> need_satisfied(const Schema& schema, const PathNeed& n) {
    const SchemaField* f = schema.find(n.path.front());
    if (!f) return "field '" + n.path.front() + "' missing from source schema";
    if (n.path.size() > 1) {
        if (f->type != FieldType::Map)
            return "field '" + n.path.front() + "' is not a map but path " +
                   format_path(n.path) + " descends into it";
        return std::nullopt;  // nested levels are not declared in the schema
    }
    switch (n.kind) {
        case PathNeed::Kind::Any:
            return std::nullopt;
        case PathNeed::Kind::Scalar:
            if (f->type == FieldType::List || f->type == FieldType::Map)
                return "field '" + f->name + "' is not scalar";
            return std::nullopt;
        case PathNeed::Kind::Numeric:
            if (!is_numeric_type(f->type))
                return "field '" + f->name + "' is not numeric";
            return std::nullopt;
        case PathNeed::Kind::Literal: {
            bool ok = false;
            if (n.literal.is_number()) ok = is_numeric_type(f->type);
            else if (n.literal.is_string()) ok = f->type == FieldType::String;
            else if (n.literal.is_boolean()) ok = f->type == FieldType::Bool;
            else ok = true;  // null literal compares with anything scalar
            if (!ok)
                return "field '" + f->name + "' has type " + to_string(f->type) +
                       ", incompatible with filter literal";
            return std::nullopt;
        }
    }
    return std::nullopt;
}

}  // namespace

VerificationReport verify(const CircuitSpec& spec, const VerifyEnv& env) {
    spec.validate();
    VerificationReport report;
    CheckResult resolvable{"resolvable"};
    CheckResult acyclic{"acyclic"};
    CheckResult schema{"schema"};
    CheckResult exported{"exported"};
    CheckResult permission{"permission"};

    for (const auto& e : spec.edges) {
        std::string name = edge_name(e);

        // (1) endpoints resolvable in their registries
        std::optional<OPortMetadata> src_oport;
        auto reg_it = env.registries.find(e.from.domain);
        if (reg_it == env.registries.end()) {
            resolvable.failures.push_back(name + ": no registry for domain '" +
                                          e.from.domain + "'");
        } else if (auto meta = reg_it->second->lookup(e.from.gate); !meta) {
            resolvable.failures.push_back(name + ": source gate not registered");
        } else if (auto it = meta->oports.find(*e.from.oport); it == meta->oports.end()) {
            resolvable.failures.push_back(name + ": source oport not registered");
        } else {
            src_oport = it->second;
        }
        auto dst_reg = env.registries.find(e.to_gate.domain);
        if (dst_reg == env.registries.end() || !dst_reg->second->lookup(e.to_gate.gate))
            resolvable.failures.push_back(name + ": destination gate not registered");
        const GateSpec* dst_spec = env.gate_spec ? env.gate_spec(e.to_gate) : nullptr;
        const IPortSpec* dst_iport = nullptr;
        if (!dst_spec) {
            resolvable.failures.push_back(name + ": destination gate not hosted");
        } else {
            for (const auto& ip : dst_spec->iports)
                if (ip.name == e.to_iport) dst_iport = &ip;
            if (!dst_iport)
                resolvable.failures.push_back(name + ": destination iport missing");
        }

        // (3) source schema vs first destination dataflow stage
        if (src_oport && dst_iport) {
            for (const auto& need : first_stage_needs(dst_iport->dataflow)) {
                if (auto fail = need_satisfied(src_oport->schema, need))
                    schema.failures.push_back(name + ": " + *fail);
            }
        }

        // (4) cross-domain edges must export
        if (e.from.domain != e.to_gate.domain && src_oport && !src_oport->exported)
            exported.failures.push_back(name + ": source oport not exported");

        // (5) destination principal must hold watch on the source oport
        if (dst_spec) {
            const Policy* policy = env.policy ? env.policy(e.from) : nullptr;
            if (!policy) {
                permission.failures.push_back(name + ": source oport policy unknown");
            } else if (!check(*policy, dst_spec->principal, *e.from.oport,
                              Permission::Watch)) {
                permission.failures.push_back(
                    name + ": principal '" + dst_spec->principal.principal_id +
                    "' lacks watch permission");
            }
        }
    }

    // (2) gate graph acyclic
    if (auto cycle = find_cycle(spec))
        acyclic.failures.push_back("gate cycle: " + *cycle);

    for (CheckResult* c : {&resolvable, &acyclic, &schema, &exported, &permission}) {
        c->passed = c->failures.empty();
        report.checks.push_back(*c);
    }
    return report;
}

Circuit::Circuit(CircuitSpec spec, EdgeConnector& connector)
    : spec_(std::move(spec)), connector_(connector) {}

Circuit::~Circuit() { stop(); }

void Circuit::start_edge(EdgeRuntime& er, std::uint64_t from_seq) {
    Gate* dst = connector_.local_gate(er.edge.to_gate);
    if (!dst)
        throw ActivationFailed(edge_name(er.edge) + ": destination gate not hosted");
    er.session = connector_.connect(er.edge.to_gate, er.edge.from.gate_only());
    er.sub = er.session->remote_subscribe(*er.edge.from.oport, dst->principal(),
                                          from_seq);
    er.state = EdgeState::Open;
    er.pump = std::thread([this, &er] { pump_edge(er); });
}

void Circuit::pump_edge(EdgeRuntime& er) {
    Gate* dst = connector_.local_gate(er.edge.to_gate);
    auto sub = er.sub;
    while (running_) {
        auto e = sub->poll(20);
        if (!e) {
            if (sub->closed()) {
                std::lock_guard lock(mu_);
                if (er.sub == sub && er.state == EdgeState::Open)
                    er.state = EdgeState::Degraded;
                return;
            }
            continue;
        }
        std::uint64_t high;
        {
            std::lock_guard lock(mu_);
            high = er.high_water;
        }
        if (e->seq <= high) continue;  // duplicate after reconnect
        er.busy = true;
        dst->ingest(er.edge.to_iport, {e->record});
        sub->ack(e->seq);
        {
            std::lock_guard lock(mu_);
            er.high_water = std::max(er.high_water, e->seq);
        }
        er.busy = false;
    }
}

std::unique_ptr<Circuit> activate(const CircuitSpec& spec, const VerifyEnv& env,
                                  EdgeConnector& connector) {
    VerificationReport report = verify(spec, env);
    if (!report.passed())
        throw ActivationFailed("circuit '" + spec.name +
                               "' failed verification:\n" + report.to_text());

    auto circuit = std::unique_ptr<Circuit>(new Circuit(spec, connector));
    circuit->running_ = true;

    // wires come up in topological order of the gate DAG: sources first
    auto pos = topo_positions(spec);
    std::vector<const CircuitEdge*> ordered;
    for (const auto& e : spec.edges) ordered.push_back(&e);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [&](const CircuitEdge* a, const CircuitEdge* b) {
                         return pos[format_address(a->from.gate_only())] <
                                pos[format_address(b->from.gate_only())];
                     });

    for (const CircuitEdge* e : ordered) {
        auto er = std::make_unique<Circuit::EdgeRuntime>();
        er->edge = *e;
        try {
            circuit->start_edge(*er, 0);
        } catch (const Error& err) {
            circuit->stop();  // roll back the sessions already opened
            throw ActivationFailed(edge_name(*e) + ": " + err.what());
        }
        circuit->edges_.push_back(std::move(er));
    }
    return circuit;
}

CircuitStatus Circuit::status() const {
    std::lock_guard lock(mu_);
    CircuitStatus s;
    s.running = running_;
    for (const auto& er : edges_)
        s.edges.push_back({er->edge, er->state, er->high_water});
    std::set<std::string> gates;
    for (const auto& e : spec_.edges) {
        gates.insert(format_address(e.from.gate_only()));
        gates.insert(format_address(e.to_gate.gate_only()));
    }
    for (const auto& g : gates)
        s.gate_live[g] = connector_.local_gate(parse_address(g)) != nullptr;
    return s;
}

void Circuit::inject_fault(std::size_t edge_index) {
    EdgeRuntime* er;
    {
        std::lock_guard lock(mu_);
        er = edges_.at(edge_index).get();
    }
    er->sub->close();
    er->session->close();
    if (er->pump.joinable()) er->pump.join();
    std::lock_guard lock(mu_);
    er->state = EdgeState::Degraded;
}

void Circuit::reconnect(std::size_t edge_index) {
    EdgeRuntime* er;
    std::uint64_t from;
    {
        std::lock_guard lock(mu_);
        er = edges_.at(edge_index).get();
        from = er->high_water;
    }
    if (er->pump.joinable()) er->pump.join();
    start_edge(*er, from);
}

void Circuit::drain(int timeout_ms) {
    auto deadline = std::chrono::steady_clock::now() +
                    std::chrono::milliseconds(timeout_ms);
    int stable = 0;
    while (std::chrono::steady_clock::now() < deadline) {
        bool idle = true;
        {
            std::lock_guard lock(mu_);
            for (const auto& er : edges_) {
                if (er->state != EdgeState::Open) continue;
                if (er->busy || (er->sub && er->sub->pending() > 0)) idle = false;
            }
        }
        stable = idle ? stable + 1 : 0;
        if (stable >= 3) return;  // quiet for three consecutive probes
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
}

void Circuit::stop() {
    running_ = false;
    for (auto& er : edges_) {
        if (er->sub) er->sub->close();
        if (er->session) er->session->close();
        if (er->pump.joinable()) er->pump.join();
        std::lock_guard lock(mu_);
        er->state = EdgeState::Closed;
    }
}

}  // namespace ioda
