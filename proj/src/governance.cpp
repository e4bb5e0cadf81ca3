#include "ioda/governance.hpp"

#include <deque>
#include <functional>
#include <sstream>

namespace ioda {

bool check(const Policy& policy, const Principal& principal,
           const std::string& oport, Permission perm) {
    for (const auto& e : policy.entries) {
        if (e.oport != oport) continue;
        if (!e.permissions.contains(perm)) continue;
        if (principal.roles.contains(e.role)) return true;
    }
    return false;
}

void ProvenanceLedger::append(const ProvenanceEntry& e) {
    if (e.lineage.contains(e.id))
        throw LedgerViolation("entry " + e.id + " lists itself as an ancestor");
    auto it = entries_.find(e.id);
    if (it != entries_.end()) {
        if (it->second == e) return;  // idempotent re-append
        throw LedgerViolation("conflicting entry for record " + e.id);
    }
    // an existing entry may already name e.id as a then-external ancestor;
    // adding e must not close a cycle through it
    std::deque<RecordId> work(e.lineage.begin(), e.lineage.end());
    std::set<RecordId> seen;
    while (!work.empty()) {
        RecordId cur = work.front();
        work.pop_front();
        if (cur == e.id)
            throw LedgerViolation("appending " + e.id + " would create a lineage cycle");
        if (!seen.insert(cur).second) continue;
        if (const ProvenanceEntry* anc = find(cur))
            work.insert(work.end(), anc->lineage.begin(), anc->lineage.end());
    }
    entries_.emplace(e.id, e);
}

bool ProvenanceLedger::contains(const RecordId& id) const {
    return entries_.contains(id);
}

const ProvenanceEntry* ProvenanceLedger::find(const RecordId& id) const {
    auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
}

TraceResult ProvenanceLedger::trace(const RecordId& id) const {
    const ProvenanceEntry* root = find(id);
    if (!root) throw UnknownRecord("no ledger entry for record " + id);
    TraceResult t;
    std::deque<RecordId> work{id};
    while (!work.empty()) {
        RecordId cur = work.front();
        work.pop_front();
        if (t.nodes.contains(cur)) continue;
        const ProvenanceEntry* e = find(cur);
        if (!e) {
            t.nodes[cur] = std::nullopt;  // external source
            t.leaves.insert(cur);
            continue;
        }
        t.nodes[cur] = *e;
        if (e->lineage.empty()) t.leaves.insert(cur);
        for (const auto& anc : e->lineage) {
            t.edges.emplace_back(cur, anc);
            work.push_back(anc);
        }
    }
    return t;
}

int ProvenanceLedger::depth(const RecordId& id) const {
    std::map<RecordId, int> memo;
    // lineage sets are acyclic by append-time construction, so plain
    // recursion terminates
    std::function<int(const RecordId&)> go = [&](const RecordId& cur) -> int {
        auto m = memo.find(cur);
        if (m != memo.end()) return m->second;
        const ProvenanceEntry* e = find(cur);
        int d = 0;
        if (e && !e->lineage.empty()) {
            for (const auto& anc : e->lineage) d = std::max(d, go(anc) + 1);
        }
        memo[cur] = d;
        return d;
    };
    return go(id);
}

static Value entry_to_json(const ProvenanceEntry& e) {
    Value lin = Value::array();
    for (const auto& l : e.lineage) lin.push_back(l);
    return {{"id", e.id},
            {"lineage", lin},
            {"gate", format_address(e.gate)},
            {"iport", e.iport},
            {"ts", e.ts}};
}

static ProvenanceEntry entry_from_json(const Value& j) {
    ProvenanceEntry e;
    e.id = j.at("id").get<std::string>();
    for (const auto& l : j.at("lineage")) e.lineage.insert(l.get<std::string>());
    e.gate = parse_address(j.at("gate").get<std::string>());
    e.iport = j.at("iport").get<std::string>();
    e.ts = j.at("ts").get<std::int64_t>();
    return e;
}

std::string ProvenanceLedger::export_jsonl() const {
    std::string out;
    for (const auto& [_, e] : entries_) {
        out += entry_to_json(e).dump();
        out += '\n';
    }
    return out;
}

ProvenanceLedger ProvenanceLedger::import_jsonl(const std::string& text) {
    ProvenanceLedger ledger;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Value j = Value::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError("bad ledger line: " + line);
        ledger.append(entry_from_json(j));
    }
    return ledger;
}

void ProvenanceLedger::merge(const ProvenanceLedger& other) {
    // Domains may attribute the same record to different gates (producer vs.
    // forwarder); first writer wins as long as the lineage agrees. Disagreeing
    // lineage is a real conflict.
    for (const auto& [_, e] : other.entries_) {
        if (const ProvenanceEntry* mine = find(e.id)) {
            if (mine->lineage != e.lineage)
                throw LedgerViolation("conflicting lineage for record " + e.id);
            continue;
        }
        append(e);
    }
}

std::string describe(const GovernanceRule& rule) {
    if (const auto* d = std::get_if<MaxLineageDepthRule>(&rule))
        return "max_lineage_depth(" + std::to_string(d->max_depth) + ")";
    if (const auto* f = std::get_if<RequireFieldRule>(&rule))
        return "require_field(" + f->oport + "," + f->field + ")";
    return "forbid_export_tag(" + std::get<ForbidExportTagRule>(rule).tag + ")";
}

std::vector<Violation> audit(const std::vector<GovernanceRule>& rules,
                             const std::vector<GateMetadata>& gates,
                             const ProvenanceLedger& ledger) {
    std::vector<Violation> out;
    for (const auto& rule : rules) {
        if (const auto* d = std::get_if<MaxLineageDepthRule>(&rule)) {
            if (d->max_depth < 1) throw InvalidSpec("max lineage depth must be >= 1");
            for (const auto& [id, _] : ledger.entries()) {
                int depth = ledger.depth(id);
                if (depth > d->max_depth) {
                    out.push_back({describe(rule), "", "", id,
                                   "derivation depth " + std::to_string(depth)});
                }
            }
        } else if (const auto* f = std::get_if<RequireFieldRule>(&rule)) {
            for (const auto& g : gates) {
                auto it = g.oports.find(f->oport);
                if (it == g.oports.end()) continue;
                if (!it->second.schema.find(f->field)) {
                    out.push_back({describe(rule), format_address(g.address),
                                   f->oport, "",
                                   "schema lacks field '" + f->field + "'"});
                }
            }
        } else {
            const auto& t = std::get<ForbidExportTagRule>(rule);
            for (const auto& g : gates) {
                for (const auto& [name, op] : g.oports) {
                    if (op.exported && op.tags.contains(t.tag)) {
                        out.push_back({describe(rule), format_address(g.address),
                                       name, "",
                                       "exported oport carries tag '" + t.tag + "'"});
                    }
                }
            }
        }
    }
    return out;
}

Value violations_to_json(const std::vector<Violation>& vs) {
    Value arr = Value::array();
    for (const auto& v : vs) {
        arr.push_back({{"rule", v.rule},
                       {"gate", v.gate},
                       {"oport", v.oport},
                       {"record", v.record},
                       {"detail", v.detail}});
    }
    return arr;
}

}  // namespace ioda
