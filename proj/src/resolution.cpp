#include "ioda/resolution.hpp"

#include <algorithm>

namespace ioda {

void Selector::validate() const {
    if (constraints.empty() && schema_requires.empty())
        throw InvalidSpec("selector needs at least one constraint or schema requirement");
    for (const auto& [name, _] : schema_requires)
        if (name.empty()) throw InvalidSpec("empty schema requirement name");
    if (domain_hint && !valid_segment(*domain_hint))
        throw InvalidSpec("bad domain hint '" + *domain_hint + "'");
}

Value selector_to_json(const Selector& s) {
    Value j = Value::object();
    Value tags = Value::object();
    for (const auto& [k, v] : s.constraints) tags[k] = v;
    j["tags"] = tags;
    Value req = Value::array();
    for (const auto& [name, type] : s.schema_requires)
        req.push_back({{"name", name}, {"type", to_string(type)}});
    j["schema"] = req;
    if (s.domain_hint) j["domain"] = *s.domain_hint;
    return j;
}

Selector selector_from_json(const Value& j) {
    Selector s;
    if (j.contains("tags"))
        for (const auto& [k, v] : j.at("tags").items())
            s.constraints[k] = v.get<std::string>();
    if (j.contains("schema"))
        for (const auto& e : j.at("schema"))
            s.schema_requires.emplace_back(
                e.at("name").get<std::string>(),
                field_type_from_string(e.at("type").get<std::string>()));
    if (j.contains("domain")) s.domain_hint = j.at("domain").get<std::string>();
    s.validate();
    return s;
}

DomainRegistry::DomainRegistry(std::string domain) : domain_(std::move(domain)) {
    if (!valid_segment(domain_)) throw InvalidSpec("bad domain '" + domain_ + "'");
}

void DomainRegistry::register_gate(const GateMetadata& meta,
                                   const std::string& verify_key_hex) {
    meta.validate();
    if (meta.address.domain != domain_)
        throw WrongDomain("gate '" + format_address(meta.address) +
                          "' registered in domain '" + domain_ + "'");
    std::lock_guard lock(mu_);
    entries_[meta.address.gate] = meta;
    if (!verify_key_hex.empty()) keys_[meta.address.gate] = verify_key_hex;
}

std::optional<GateMetadata> DomainRegistry::lookup(const std::string& gate) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(gate);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::string> DomainRegistry::lookup_key(const std::string& gate) const {
    std::lock_guard lock(mu_);
    auto it = keys_.find(gate);
    if (it == keys_.end()) return std::nullopt;
    return it->second;
}

std::vector<GateMetadata> DomainRegistry::list() const {
    std::lock_guard lock(mu_);
    std::vector<GateMetadata> out;
    out.reserve(entries_.size());
    for (const auto& [_, m] : entries_) out.push_back(m);
    return out;
}

std::vector<DataRecord> DomainRegistry::export_records(IdGen& ids) const {
    std::vector<DataRecord> out;
    for (const auto& m : list())
        out.push_back(make_source_record(ids, 0, metadata_to_payload(m)));
    return out;
}

DomainRegistry::DomainRegistry(std::string domain,
                               const std::vector<DataRecord>& records)
    : domain_(std::move(domain)) {
    for (const auto& r : records) register_gate(metadata_from_payload(r.payload));
}

DomainRegistry DomainRegistry::rebuild(const std::string& domain,
                                       const std::vector<DataRecord>& records) {
    return DomainRegistry(domain, records);
}

namespace {

struct Candidate {
    GateAddress address;
    int overlap = 0;  // tag keys shared (equal value) with the requester
};

bool selector_matches(const GateMetadata& gate, const std::string& oport_name,
                      const OPortMetadata& oport, const Selector& sel) {
    // oport tags shadow gate tags of the same name
    auto tag_value = [&](const std::string& key) -> const std::string* {
        auto it = oport.tags.find(key);
        if (it != oport.tags.end()) return &it->second;
        it = gate.tags.find(key);
        if (it != gate.tags.end()) return &it->second;
        return nullptr;
    };
    for (const auto& [key, want] : sel.constraints) {
        const std::string* got = tag_value(key);
        if (!got || *got != want) return false;
    }
    for (const auto& [name, type] : sel.schema_requires) {
        const SchemaField* f = oport.schema.find(name);
        if (!f || f->type != type) return false;
    }
    (void)oport_name;
    return true;
}

int tag_overlap(const GateMetadata& gate, const OPortMetadata& oport,
                const TagMap& requester_tags) {
    int n = 0;
    for (const auto& [key, value] : requester_tags) {
        const std::string* got = nullptr;
        if (auto it = oport.tags.find(key); it != oport.tags.end()) got = &it->second;
        else if (auto gt = gate.tags.find(key); gt != gate.tags.end()) got = &gt->second;
        if (got && *got == value) ++n;
    }
    return n;
}

GateAddress resolve_impl(const DomainRegistry& reg, const GateMetadata& requester,
                         const Selector& sel, bool exported_only) {
    sel.validate();
    std::vector<Candidate> candidates;
    for (const auto& gate : reg.list()) {
        for (const auto& [name, oport] : gate.oports) {
            if (exported_only && !oport.exported) continue;
            if (!selector_matches(gate, name, oport, sel)) continue;
            candidates.push_back({gate.address.with_oport(name),
                                  tag_overlap(gate, oport, requester.tags)});
        }
    }
    if (candidates.empty())
        throw NotFound("no oport in domain '" + reg.domain() + "' matches selector");
    auto best = std::min_element(
        candidates.begin(), candidates.end(),
        [](const Candidate& a, const Candidate& b) {
            if (a.overlap != b.overlap) return a.overlap > b.overlap;
            return format_address(a.address) < format_address(b.address);
        });
    return best->address;
}

class LocalClient : public RegistryClient {
public:
    explicit LocalClient(const DomainRegistry& reg) : reg_(reg) {}

    GateAddress resolve_exported(const GateMetadata& requester,
                                 const Selector& sel) override {
        return resolve_impl(reg_, requester, sel, true);
    }

private:
    const DomainRegistry& reg_;
};

}  // namespace

GateAddress resolve(const DomainRegistry& reg, const GateMetadata& requester,
                    const Selector& sel) {
    return resolve_impl(reg, requester, sel, false);
}

GateAddress resolve_exported_local(const DomainRegistry& reg,
                                   const GateMetadata& requester,
                                   const Selector& sel) {
    return resolve_impl(reg, requester, sel, true);
}

std::shared_ptr<RegistryClient> make_local_client(const DomainRegistry& reg) {
    return std::make_shared<LocalClient>(reg);
}

GateAddress resolve_cross(const DomainRegistry& local, const PeeringTable& peers,
                          const GateMetadata& requester, const Selector& sel) {
    sel.validate();
    if (sel.domain_hint) {
        if (*sel.domain_hint == local.domain())
            return resolve(local, requester, sel);
        auto it = peers.peers.find(*sel.domain_hint);
        if (it == peers.peers.end())
            throw UnknownPeer("no peering entry for domain '" + *sel.domain_hint + "'");
        return it->second->resolve_exported(requester, sel);
    }
    try {
        return resolve(local, requester, sel);
    } catch (const NotFound&) {
    }
    for (const auto& [domain, client] : peers.peers) {  // map is lexicographic
        if (domain == local.domain()) continue;
        try {
            return client->resolve_exported(requester, sel);
        } catch (const NotFound&) {
        }
    }
    throw NotFound("selector matched no oport in any reachable domain");
}

}  // namespace ioda
