#include "ioda/record.hpp"

#include <algorithm>
#include <random>

#include <sodium.h>

namespace ioda {

int payload_depth(const Value& v) {
    if (v.is_object() || v.is_array()) {
        int deepest = 0;
        for (const auto& child : v) deepest = std::max(deepest, payload_depth(child));
        return 1 + deepest;
    }
    return 1;
}

static void check_payload(const Value& payload) {
    if (payload_depth(payload) > kMaxPayloadDepth)
        throw InvalidSpec("payload nesting exceeds depth " +
                          std::to_string(kMaxPayloadDepth));
}

bool valid_record_id(const std::string& id) {
    if (id.size() != 32) return false;
    for (char c : id) {
        bool ok = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
        if (!ok) return false;
    }
    return true;
}

Value to_json(const DataRecord& r) {
    Value j;
    j["id"] = r.id;
    j["ts"] = r.ts;
    j["payload"] = r.payload;
    j["lineage"] = Value::array();
    for (const auto& l : r.lineage) j["lineage"].push_back(l);  // set is sorted
    return j;
}

std::string to_canonical(const DataRecord& r) { return to_json(r).dump(); }

DataRecord record_from_json(const Value& j) {
    if (!j.is_object()) throw ParseError("record must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "id" && key != "ts" && key != "payload" && key != "lineage")
            throw ParseError("unknown record key '" + key + "'");
    }
    if (!j.contains("id") || !j.contains("ts") || !j.contains("payload") ||
        !j.contains("lineage"))
        throw ParseError("record missing required key");
    DataRecord r;
    r.id = j.at("id").get<std::string>();
    if (!valid_record_id(r.id)) throw ParseError("bad record id '" + r.id + "'");
    if (!j.at("ts").is_number_integer())
        throw ParseError("record ts must be an integer");
    r.ts = j.at("ts").get<std::int64_t>();
    r.payload = j.at("payload");
    check_payload(r.payload);
    if (!j.at("lineage").is_array()) throw ParseError("lineage must be an array");
    for (const auto& l : j.at("lineage")) {
        auto id = l.get<std::string>();
        if (!valid_record_id(id)) throw ParseError("bad lineage id '" + id + "'");
        if (id == r.id) throw ParseError("record lineage references itself");
        r.lineage.insert(id);
    }
    return r;
}

DataRecord from_canonical(const std::string& line) {
    Value j = Value::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError("invalid JSON record");
    return record_from_json(j);
}

std::string sha256_hex(const std::string& data) {
    unsigned char digest[crypto_hash_sha256_BYTES];
    crypto_hash_sha256(digest, reinterpret_cast<const unsigned char*>(data.data()),
                       data.size());
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * sizeof(digest));
    for (unsigned char b : digest) {
        out.push_back(hex[b >> 4]);
        out.push_back(hex[b & 0xf]);
    }
    return out;
}

IdGen::IdGen() {
    std::random_device rd;
    state_[0] = (static_cast<std::uint64_t>(rd()) << 32) | rd();
    state_[1] = (static_cast<std::uint64_t>(rd()) << 32) | rd();
}

IdGen::IdGen(std::uint64_t seed) {
    state_[0] = seed;
    state_[1] = 0x9e3779b97f4a7c15ull ^ seed;
}

RecordId IdGen::next() {
    std::lock_guard lock(mu_);
    // splitmix-style stream over the two state words
    auto mix = [](std::uint64_t& s) {
        s += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = s;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    };
    std::uint64_t a = mix(state_[0]);
    std::uint64_t b = mix(state_[1]);
    char buf[33];
    std::snprintf(buf, sizeof(buf), "%016llx%016llx",
                  static_cast<unsigned long long>(a),
                  static_cast<unsigned long long>(b));
    return RecordId(buf);
}

DataRecord make_source_record(IdGen& ids, std::int64_t ts, Value payload) {
    check_payload(payload);
    DataRecord r;
    r.id = ids.next();
    r.ts = ts;
    r.payload = std::move(payload);
    return r;
}

DataRecord derive_record(const Value& payload,
                         const std::vector<const DataRecord*>& contributors) {
    check_payload(payload);
    DataRecord r;
    r.payload = payload;
    r.ts = 0;
    Value seed = Value::array();
    Value contrib_ids = Value::array();
    for (const DataRecord* c : contributors) {
        r.ts = std::max(r.ts, c->ts);
        r.lineage.insert(c->id);
        r.lineage.insert(c->lineage.begin(), c->lineage.end());
        contrib_ids.push_back(c->id);
    }
    seed.push_back(std::move(contrib_ids));
    seed.push_back(payload);
    r.id = sha256_hex(seed.dump()).substr(0, 32);
    r.lineage.erase(r.id);  // keep the no-self-reference invariant even on a hash collision
    return r;
}

}  // namespace ioda
