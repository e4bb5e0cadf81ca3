#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "ioda/metadata.hpp"

namespace ioda {

// RBAC decision: allow iff some role of the principal has an entry granting
// the permission on the oport. Default deny.
bool check(const Policy& policy, const Principal& principal,
           const std::string& oport, Permission perm);

struct ProvenanceEntry {
    RecordId id;
    std::set<RecordId> lineage;
    GateAddress gate;  // producing gate (domain/gate)
    std::string iport;
    std::int64_t ts = 0;

    bool operator==(const ProvenanceEntry&) const = default;
};

struct TraceResult {
    // every ancestor id reachable over lineage links, including the root
    std::map<RecordId, std::optional<ProvenanceEntry>> nodes;  // nullopt = external source
    std::vector<std::pair<RecordId, RecordId>> edges;          // derived -> ancestor
    std::set<RecordId> leaves;  // source records (empty lineage) and externals
};

// Append-only lineage map. Entries are immutable; re-appending an identical
// entry is a no-op, a conflicting one throws LedgerViolation. Lineage ids
// that never resolve to an entry are treated as external sources.
class ProvenanceLedger {
public:
    void append(const ProvenanceEntry& e);
    bool contains(const RecordId& id) const;
    const ProvenanceEntry* find(const RecordId& id) const;
    std::size_t size() const { return entries_.size(); }

    // Throws UnknownRecord if the id has no entry.
    TraceResult trace(const RecordId& id) const;

    // Longest derivation chain below the record; sources and externals are 0.
    int depth(const RecordId& id) const;

    // One JSON entry per line.
    std::string export_jsonl() const;
    static ProvenanceLedger import_jsonl(const std::string& text);

    // Union of two ledgers, e.g. for deployment-wide traces across domains.
    void merge(const ProvenanceLedger& other);

    const std::map<RecordId, ProvenanceEntry>& entries() const { return entries_; }

private:
    std::map<RecordId, ProvenanceEntry> entries_;
};

struct MaxLineageDepthRule {
    int max_depth = 1;
};
struct RequireFieldRule {
    std::string oport;
    std::string field;
};
struct ForbidExportTagRule {
    std::string tag;
};

using GovernanceRule =
    std::variant<MaxLineageDepthRule, RequireFieldRule, ForbidExportTagRule>;

std::string describe(const GovernanceRule& rule);

struct Violation {
    std::string rule;
    std::string gate;    // formatted address, empty when record-scoped
    std::string oport;   // empty when not oport-scoped
    RecordId record;     // empty when not record-scoped
    std::string detail;
};

// Statically audits gate metadata and the ledger against the rules.
std::vector<Violation> audit(const std::vector<GovernanceRule>& rules,
                             const std::vector<GateMetadata>& gates,
                             const ProvenanceLedger& ledger);

Value violations_to_json(const std::vector<Violation>& vs);

}  // namespace ioda
