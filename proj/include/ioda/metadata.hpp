#pragma once

#include <map>
#include <set>
#include <string>

#include "ioda/address.hpp"
#include "ioda/record.hpp"
#include "ioda/schema.hpp"

namespace ioda {

using TagMap = std::map<std::string, std::string>;

constexpr std::size_t kMaxTags = 64;

enum class Permission { Query, Watch };

Permission permission_from_string(const std::string& s);
std::string to_string(Permission p);

struct Principal {
    std::string principal_id;
    std::set<std::string> roles;

    bool operator==(const Principal&) const = default;
};

// Role-based grants per oport; absence of an entry means deny.
struct Policy {
    struct Entry {
        std::string role;
        std::string oport;
        std::set<Permission> permissions;

        bool operator==(const Entry&) const = default;
    };
    std::vector<Entry> entries;

    bool operator==(const Policy&) const = default;

    // Throws InvalidSpec on duplicate (role, oport) pairs.
    void validate() const;
};

struct OPortMetadata {
    Schema schema;
    bool exported = false;
    TagMap tags;

    bool operator==(const OPortMetadata&) const = default;
};

struct GateMetadata {
    GateAddress address;  // domain/gate, no oport
    std::string description;
    TagMap tags;
    std::map<std::string, OPortMetadata> oports;

    bool operator==(const GateMetadata&) const = default;

    void validate() const;
};

// Metadata is itself data: GateMetadata round-trips losslessly through a
// DataRecord payload.
Value metadata_to_payload(const GateMetadata& m);
GateMetadata metadata_from_payload(const Value& payload);

Value principal_to_json(const Principal& p);
Principal principal_from_json(const Value& j);

Value policy_to_json(const Policy& p);
Policy policy_from_json(const Value& j);

}  // namespace ioda
