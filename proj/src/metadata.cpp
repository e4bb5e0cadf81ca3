#include "ioda/metadata.hpp"

#include <set>

namespace ioda {

Permission permission_from_string(const std::string& s) {
    if (s == "query") return Permission::Query;
    if (s == "watch") return Permission::Watch;
    throw ParseError("unknown permission '" + s + "'");
}

std::string to_string(Permission p) {
    return p == Permission::Query ? "query" : "watch";
}

void Policy::validate() const {
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& e : entries) {
        if (!seen.insert({e.role, e.oport}).second)
            throw InvalidSpec("duplicate policy entry for role '" + e.role +
                              "' oport '" + e.oport + "'");
    }
}

void GateMetadata::validate() const {
    if (address.oport) throw InvalidSpec("gate metadata address must not name an oport");
    if (!valid_segment(address.domain) || !valid_segment(address.gate))
        throw InvalidSpec("bad gate address segments");
    if (tags.size() > kMaxTags) throw InvalidSpec("too many gate tags");
    for (const auto& [name, op] : oports) {
        if (!valid_segment(name))
            throw InvalidSpec("bad oport name '" + name + "'");
        if (op.tags.size() > kMaxTags) throw InvalidSpec("too many oport tags");
        op.schema.validate();
    }
}

static Value tags_to_json(const TagMap& tags) {
    Value j = Value::object();
    for (const auto& [k, v] : tags) j[k] = v;
    return j;
}

static TagMap tags_from_json(const Value& j) {
    TagMap tags;
    for (const auto& [k, v] : j.items()) tags[k] = v.get<std::string>();
    return tags;
}

Value metadata_to_payload(const GateMetadata& m) {
    Value j;
    j["address"] = format_address(m.address);
    j["description"] = m.description;
    j["tags"] = tags_to_json(m.tags);
    Value oports = Value::object();
    for (const auto& [name, op] : m.oports) {
        oports[name] = {{"schema", schema_to_json(op.schema)},
                        {"exported", op.exported},
                        {"tags", tags_to_json(op.tags)}};
    }
    j["oports"] = oports;
    return j;
}

GateMetadata metadata_from_payload(const Value& payload) {
    GateMetadata m;
    m.address = parse_address(payload.at("address").get<std::string>());
    m.description = payload.at("description").get<std::string>();
    m.tags = tags_from_json(payload.at("tags"));
    for (const auto& [name, op] : payload.at("oports").items()) {
        OPortMetadata o;
        o.schema = schema_from_json(op.at("schema"));
        o.exported = op.at("exported").get<bool>();
        o.tags = tags_from_json(op.at("tags"));
        m.oports[name] = std::move(o);
    }
    m.validate();
    return m;
}

Value principal_to_json(const Principal& p) {
    Value j;
    j["id"] = p.principal_id;
    j["roles"] = Value::array();
    for (const auto& r : p.roles) j["roles"].push_back(r);
    return j;
}

Principal principal_from_json(const Value& j) {
    Principal p;
    p.principal_id = j.at("id").get<std::string>();
    if (p.principal_id.empty()) throw ParseError("empty principal id");
    for (const auto& r : j.at("roles")) p.roles.insert(r.get<std::string>());
    return p;
}

Value policy_to_json(const Policy& p) {
    Value arr = Value::array();
    for (const auto& e : p.entries) {
        Value perms = Value::array();
        for (auto perm : e.permissions) perms.push_back(to_string(perm));
        arr.push_back({{"role", e.role}, {"oport", e.oport}, {"perms", perms}});
    }
    return arr;
}

Policy policy_from_json(const Value& j) {
    Policy p;
    for (const auto& e : j) {
        Policy::Entry entry;
        entry.role = e.at("role").get<std::string>();
        entry.oport = e.at("oport").get<std::string>();
        for (const auto& perm : e.at("perms"))
            entry.permissions.insert(permission_from_string(perm.get<std::string>()));
        p.entries.push_back(std::move(entry));
    }
    p.validate();
    return p;
}

}  // namespace ioda
