#pragma once

#include <cstdint>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ioda/errors.hpp"

namespace ioda {

// JSON-like payload tree: maps, ordered lists, strings, integers, floats,
// booleans, null. Object keys serialize sorted, so canonical forms compare
// byte-for-byte.
using Value = nlohmann::json;

using RecordId = std::string;  // 32 lowercase hex characters

constexpr int kMaxPayloadDepth = 32;

int payload_depth(const Value& v);

struct DataRecord {
    RecordId id;
    std::int64_t ts = 0;  // milliseconds since epoch
    Value payload;
    std::set<RecordId> lineage;  // transitive ancestor ids, empty for sources

    bool operator==(const DataRecord&) const = default;
};

// Canonical serialized form: {"id":...,"lineage":[...],"payload":...,"ts":...}
// with sorted object keys and lineage in ascending order.
std::string to_canonical(const DataRecord& r);
Value to_json(const DataRecord& r);

// Rejects unknown top-level keys, malformed ids, self-referential lineage,
// and payloads nested deeper than kMaxPayloadDepth.
DataRecord record_from_json(const Value& j);
DataRecord from_canonical(const std::string& line);

bool valid_record_id(const std::string& id);

std::string sha256_hex(const std::string& data);

// Fresh source record with a generator-assigned id and empty lineage.
// Throws if the payload exceeds the depth bound.
class IdGen {
public:
    // Randomly seeded.
    IdGen();
    // Deterministic stream, for reproducible scenario runs.
    explicit IdGen(std::uint64_t seed);

    RecordId next();

private:
    std::mutex mu_;
    std::uint64_t state_[2];
};

DataRecord make_source_record(IdGen& ids, std::int64_t ts, Value payload);

// Derived record: id is content-addressed over (contributor ids, payload),
// ts is the max contributor ts, lineage is the union of contributor lineages
// plus the contributor ids themselves. Deterministic by construction, which
// keeps dataflow output stable across evaluators and transports.
DataRecord derive_record(const Value& payload,
                         const std::vector<const DataRecord*>& contributors);

}  // namespace ioda
