#include "ioda/gate.hpp"

#include <algorithm>
#include <chrono>

namespace ioda {

GateMetadata make_metadata(const GateSpec& spec) {
    GateMetadata m;
    m.address = spec.address.gate_only();
    m.description = spec.description;
    m.tags = spec.tags;
    for (const auto& op : spec.oports)
        m.oports[op.name] = {op.schema, op.exported, op.tags};
    return m;
}

Value gate_spec_to_json(const GateSpec& spec) {
    Value j;
    j["address"] = format_address(spec.address);
    j["description"] = spec.description;
    Value tags = Value::object();
    for (const auto& [k, v] : spec.tags) tags[k] = v;
    j["tags"] = tags;
    j["principal"] = principal_to_json(spec.principal);
    if (spec.store.kind == StoreBackend::Kind::File)
        j["store"] = {{"backend", "file"}, {"path", spec.store.path}};
    else
        j["store"] = {{"backend", "memory"}};
    Value iports = Value::array();
    for (const auto& ip : spec.iports) {
        Value e;
        e["name"] = ip.name;
        if (ip.source_address)
            e["source"] = {{"address", format_address(*ip.source_address)}};
        else
            e["source"] = {{"selector", selector_to_json(*ip.source_selector)}};
        e["dataflow"] = dataflow_to_json(ip.dataflow);
        iports.push_back(std::move(e));
    }
    j["iports"] = iports;
    Value oports = Value::array();
    for (const auto& op : spec.oports) {
        Value policy = Value::array();
        for (const auto& entry : op.policy.entries) {
            Value perms = Value::array();
            for (auto p : entry.permissions) perms.push_back(to_string(p));
            policy.push_back({{"role", entry.role}, {"perms", perms}});
        }
        Value otags = Value::object();
        for (const auto& [k, v] : op.tags) otags[k] = v;
        oports.push_back({{"name", op.name},
                          {"schema", schema_to_json(op.schema)},
                          {"view_dataflow", dataflow_to_json(op.view_dataflow)},
                          {"exported", op.exported},
                          {"tags", otags},
                          {"policy", policy}});
    }
    j["oports"] = oports;
    return j;
}

GateSpec gate_spec_from_json(const Value& j) {
    GateSpec spec;
    spec.address = parse_address(j.at("address").get<std::string>());
    spec.description = j.value("description", "");
    if (j.contains("tags"))
        for (const auto& [k, v] : j.at("tags").items())
            spec.tags[k] = v.get<std::string>();
    if (j.contains("principal")) {
        spec.principal = principal_from_json(j.at("principal"));
    } else {
        spec.principal.principal_id = format_address(spec.address);
        spec.principal.roles = {"gate"};
    }
    if (j.contains("store")) {
        std::string backend = j.at("store").at("backend").get<std::string>();
        if (backend == "file") {
            spec.store.kind = StoreBackend::Kind::File;
            spec.store.path = j.at("store").at("path").get<std::string>();
        } else if (backend != "memory") {
            throw ParseError("unknown store backend '" + backend + "'");
        }
    }
    for (const auto& e : j.value("iports", Value::array())) {
        IPortSpec ip;
        ip.name = e.at("name").get<std::string>();
        const Value& source = e.at("source");
        if (source.contains("address"))
            ip.source_address = parse_address(source.at("address").get<std::string>());
        else
            ip.source_selector = selector_from_json(source.at("selector"));
        ip.dataflow = dataflow_from_json(e.value("dataflow", Value::array()));
        spec.iports.push_back(std::move(ip));
    }
    for (const auto& e : j.value("oports", Value::array())) {
        OPortSpec op;
        op.name = e.at("name").get<std::string>();
        op.schema = schema_from_json(e.value("schema", Value::array()));
        op.view_dataflow = dataflow_from_json(e.value("view_dataflow", Value::array()));
        op.exported = e.value("exported", false);
        if (e.contains("tags"))
            for (const auto& [k, v] : e.at("tags").items())
                op.tags[k] = v.get<std::string>();
        for (const auto& entry : e.value("policy", Value::array())) {
            Policy::Entry pe;
            pe.role = entry.at("role").get<std::string>();
            pe.oport = op.name;
            for (const auto& p : entry.at("perms"))
                pe.permissions.insert(permission_from_string(p.get<std::string>()));
            op.policy.entries.push_back(std::move(pe));
        }
        spec.oports.push_back(std::move(op));
    }
    spec.metadata = make_metadata(spec);
    return spec;
}

std::optional<Subscription::Event> Subscription::poll(int timeout_ms) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                 [&] { return !queue_.empty() || closed_; });
    if (queue_.empty()) return std::nullopt;
    Event e = queue_.front();
    queue_.pop_front();
    return e;
}

void Subscription::ack(std::uint64_t seq) {
    std::lock_guard lock(mu_);
    acked_ = std::max(acked_, seq);
}

std::uint64_t Subscription::acked() const {
    std::lock_guard lock(mu_);
    return acked_;
}

void Subscription::close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
}

bool Subscription::closed() const {
    std::lock_guard lock(mu_);
    return closed_;
}

void Subscription::push(const Event& e) {
    std::lock_guard lock(mu_);
    if (closed_) return;
    queue_.push_back(e);
    cv_.notify_all();
}

static void validate_spec(const GateSpec& spec) {
    if (spec.address.oport) throw InvalidSpec("gate address must not name an oport");
    if (!valid_segment(spec.address.domain) || !valid_segment(spec.address.gate))
        throw InvalidSpec("bad gate address");
    if (spec.principal.principal_id.empty())
        throw InvalidSpec("gate principal id must be non-empty");
    std::set<std::string> names;
    for (const auto& ip : spec.iports) {
        if (!valid_segment(ip.name)) throw InvalidSpec("bad iport name '" + ip.name + "'");
        if (!names.insert(ip.name).second)
            throw InvalidSpec("duplicate iport '" + ip.name + "'");
        if (ip.source_address.has_value() == ip.source_selector.has_value())
            throw InvalidSpec("iport '" + ip.name +
                              "' needs exactly one of address or selector");
        if (ip.source_selector) ip.source_selector->validate();
        if (ip.source_address && !ip.source_address->oport)
            throw InvalidSpec("iport '" + ip.name + "' source must name an oport");
        ip.dataflow.validate();
    }
    names.clear();
    for (const auto& op : spec.oports) {
        if (!valid_segment(op.name)) throw InvalidSpec("bad oport name '" + op.name + "'");
        if (!names.insert(op.name).second)
            throw InvalidSpec("duplicate oport '" + op.name + "'");
        op.schema.validate();
        op.view_dataflow.validate();
        op.policy.validate();
    }
    // metadata must mirror the spec
    if (spec.metadata != make_metadata(spec))
        throw InvalidSpec("gate metadata does not mirror the spec");
}

Gate::Gate(GateSpec spec, std::unique_ptr<DataStore> store, ProvenanceLedger* ledger)
    : spec_(std::move(spec)), store_(std::move(store)), ledger_(ledger) {
    for (const auto& op : spec_.oports) views_[op.name];
}

std::unique_ptr<Gate> create_gate(GateSpec spec, ProvenanceLedger* ledger) {
    validate_spec(spec);
    std::unique_ptr<DataStore> store;
    if (spec.store.kind == StoreBackend::Kind::File)
        store = make_file_store(spec.store.path);
    else
        store = make_memory_store();
    return std::unique_ptr<Gate>(new Gate(std::move(spec), std::move(store), ledger));
}

const OPortSpec* Gate::find_oport(const std::string& name) const {
    for (const auto& op : spec_.oports)
        if (op.name == name) return &op;
    return nullptr;
}

const IPortSpec* Gate::find_iport(const std::string& name) const {
    for (const auto& ip : spec_.iports)
        if (ip.name == name) return &ip;
    return nullptr;
}

void Gate::record_provenance(const DataRecord& r, const std::string& iport) {
    if (!ledger_) return;
    if (ledger_->contains(r.id)) return;
    ledger_->append({r.id, r.lineage, spec_.address.gate_only(), iport, r.ts});
}

IngestReport Gate::ingest(const std::string& iport, const Batch& batch) {
    std::lock_guard lock(mu_);
    const IPortSpec* ip = find_iport(iport);
    if (!ip) throw UnknownIPort("gate has no iport '" + iport + "'");

    for (const auto& r : batch) record_provenance(r, iport);

    std::set<std::string> guard;
    AuxResolver aux = [&](const std::string& source) -> Batch {
        // join sources resolve to this gate's own oport views
        if (!find_oport(source))
            throw UnresolvedJoinSource("unknown join source '" + source + "'");
        return refresh_view(source, guard).cache;
    };
    DeriveSink sink = [&](const DataRecord& r) { record_provenance(r, iport); };

    Batch derived = apply_dataflow(ip->dataflow, batch, aux, sink);
    for (const auto& r : derived) store_->append({iport, r});

    for (auto& [name, vs] : views_) {
        vs.cache_valid = false;
        bool watched = false;
        for (auto& w : vs.subscribers)
            if (!w.expired()) watched = true;
        if (watched) {
            std::set<std::string> g2;
            refresh_view(name, g2);
        }
    }
    return {batch.size(), derived.size()};
}

Gate::ViewState& Gate::refresh_view(const std::string& oport,
                                    std::set<std::string>& in_progress) {
    const OPortSpec* op = find_oport(oport);
    if (!op) throw UnknownOPort("gate has no oport '" + oport + "'");
    ViewState& vs = views_[oport];
    if (vs.cache_valid) return vs;
    if (!in_progress.insert(oport).second)
        throw UnresolvedJoinSource("cyclic join source through oport '" + oport + "'");

    Batch input;
    for (const auto& sr : store_->scan_all()) input.push_back(sr.record);

    AuxResolver aux = [&](const std::string& source) -> Batch {
        if (!find_oport(source))
            throw UnresolvedJoinSource("unknown join source '" + source + "'");
        return refresh_view(source, in_progress).cache;
    };
    DeriveSink sink = [&](const DataRecord& r) { record_provenance(r, "oport:" + oport); };

    Batch view = apply_dataflow(op->view_dataflow, input, aux, sink);
    Batch conforming;
    std::size_t dropped = 0;
    for (auto& r : view) {
        if (conforms(r, op->schema))
            conforming.push_back(std::move(r));
        else
            ++dropped;
    }

    vs.cache = std::move(conforming);
    vs.dropped = dropped;
    vs.cache_valid = true;
    in_progress.erase(oport);

    // extend the event log with records not logged yet, in view order
    for (const auto& r : vs.cache) {
        if (vs.logged_ids.contains(r.id)) continue;
        vs.event_log.push_back(r);
        vs.logged_ids.insert(r.id);
        Subscription::Event e{vs.event_log.size(), r};
        for (auto it = vs.subscribers.begin(); it != vs.subscribers.end();) {
            if (auto sub = it->lock(); sub && !sub->closed()) {
                sub->push(e);
                ++it;
            } else {
                it = vs.subscribers.erase(it);
            }
        }
    }
    return vs;
}

OPortView Gate::materialize(const std::string& oport) {
    std::lock_guard lock(mu_);
    std::set<std::string> guard;
    ViewState& vs = refresh_view(oport, guard);
    OPortView view;
    view.oport = oport;
    view.dropped = vs.dropped;
    view.head_seq = vs.event_log.size();
    for (const auto& r : vs.cache) {
        view.records.push_back(r);
        // record seq = its position in the event log
        auto it = std::find_if(vs.event_log.begin(), vs.event_log.end(),
                               [&](const DataRecord& e) { return e.id == r.id; });
        view.seqs.push_back(
            static_cast<std::uint64_t>(it - vs.event_log.begin()) + 1);
    }
    return view;
}

Batch Gate::query(const std::string& oport, const Principal& principal,
                  const std::optional<FilterOp>& filter) {
    std::lock_guard lock(mu_);
    const OPortSpec* op = find_oport(oport);
    if (!op) throw UnknownOPort("gate has no oport '" + oport + "'");
    if (!check(op->policy, principal, oport, Permission::Query))
        throw AccessDenied("principal '" + principal.principal_id +
                           "' may not query oport '" + oport + "'");
    std::set<std::string> guard;
    Batch view = refresh_view(oport, guard).cache;
    if (!filter) return view;
    return apply_operator(*filter, view, nullptr);
}

std::shared_ptr<Subscription> Gate::watch(const std::string& oport,
                                          const Principal& principal,
                                          std::uint64_t from_seq) {
    std::lock_guard lock(mu_);
    const OPortSpec* op = find_oport(oport);
    if (!op) throw UnknownOPort("gate has no oport '" + oport + "'");
    if (!check(op->policy, principal, oport, Permission::Watch))
        throw AccessDenied("principal '" + principal.principal_id +
                           "' may not watch oport '" + oport + "'");
    std::set<std::string> guard;
    ViewState& vs = refresh_view(oport, guard);
    auto sub = std::make_shared<Subscription>();
    sub->ack(from_seq);
    for (std::uint64_t i = from_seq; i < vs.event_log.size(); ++i)
        sub->push({i + 1, vs.event_log[i]});
    vs.subscribers.push_back(sub);
    return sub;
}

}  // namespace ioda
