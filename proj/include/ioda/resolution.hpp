#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ioda/metadata.hpp"

namespace ioda {

// Metadata constraints an iport uses to discover a source oport.
struct Selector {
    TagMap constraints;  // tag name -> required value
    std::vector<std::pair<std::string, FieldType>> schema_requires;
    std::optional<std::string> domain_hint;

    // Throws InvalidSpec when no constraint or schema requirement is present.
    void validate() const;
};

Value selector_to_json(const Selector& s);
Selector selector_from_json(const Value& j);

// Resolves selectors against one domain's gate registry, possibly remote.
class RegistryClient {
public:
    virtual ~RegistryClient() = default;

    // Cross-domain resolution: only exported oports are candidates.
    // Throws NotFound when nothing matches.
    virtual GateAddress resolve_exported(const GateMetadata& requester,
                                         const Selector& sel) = 0;
};

// Per-domain gate registry with last-write-wins registration keyed by gate
// name. Lookups are safe concurrent with registration.
class DomainRegistry {
public:
    explicit DomainRegistry(std::string domain);

    const std::string& domain() const { return domain_; }

    // Throws WrongDomain when meta.address.domain differs from the registry's.
    // An optional verification key (hex) is stored alongside the metadata for
    // wire authentication.
    void register_gate(const GateMetadata& meta, const std::string& verify_key_hex = "");

    std::optional<GateMetadata> lookup(const std::string& gate) const;
    std::optional<std::string> lookup_key(const std::string& gate) const;
    std::vector<GateMetadata> list() const;

    // Registry entries are data: one DataRecord per gate, rebuildable.
    std::vector<DataRecord> export_records(IdGen& ids) const;
    static DomainRegistry rebuild(const std::string& domain,
                                  const std::vector<DataRecord>& records);

private:
    DomainRegistry(std::string domain, const std::vector<DataRecord>& records);

    std::string domain_;
    mutable std::mutex mu_;
    std::map<std::string, GateMetadata> entries_;
    std::map<std::string, std::string> keys_;
};

// Intra-domain resolution (GRP). Returns the unique best match: candidates
// satisfy every tag constraint and schema requirement; ties break by tag
// overlap with the requester, then by smallest canonical address. Throws
// NotFound when no candidate exists.
GateAddress resolve(const DomainRegistry& reg, const GateMetadata& requester,
                    const Selector& sel);

// As resolve, restricted to exported oports.
GateAddress resolve_exported_local(const DomainRegistry& reg,
                                   const GateMetadata& requester,
                                   const Selector& sel);

std::shared_ptr<RegistryClient> make_local_client(const DomainRegistry& reg);

struct PeeringTable {
    std::map<std::string, std::shared_ptr<RegistryClient>> peers;
};

// Cross-domain resolution (bGRP): with a domain hint, only that domain is
// queried; otherwise local first, then peers in lexicographic order. Peer
// candidates are restricted to exported oports.
GateAddress resolve_cross(const DomainRegistry& local, const PeeringTable& peers,
                          const GateMetadata& requester, const Selector& sel);

}  // namespace ioda
