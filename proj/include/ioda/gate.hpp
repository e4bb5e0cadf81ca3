#pragma once

#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ioda/dataflow.hpp"
#include "ioda/governance.hpp"
#include "ioda/metadata.hpp"
#include "ioda/resolution.hpp"
#include "ioda/store.hpp"

namespace ioda {

struct IPortSpec {
    std::string name;
    // exactly one of the two: a literal oport address or a selector
    std::optional<GateAddress> source_address;
    std::optional<Selector> source_selector;
    Dataflow dataflow;
};

struct OPortSpec {
    std::string name;
    Schema schema;
    Dataflow view_dataflow;  // applied over store contents
    bool exported = false;
    Policy policy;
    TagMap tags;
};

struct StoreBackend {
    enum class Kind { Memory, File };
    Kind kind = Kind::Memory;
    std::string path;  // file backend only
};

struct GateSpec {
    GateAddress address;  // domain/gate
    std::string description;
    TagMap tags;
    GateMetadata metadata;  // must mirror address/oports; see make_metadata
    Principal principal;    // identity the gate acts as when consuming
    std::vector<IPortSpec> iports;
    std::vector<OPortSpec> oports;
    StoreBackend store;
};

// Builds the metadata mirror from the spec's address, description, tags and
// oports.
GateMetadata make_metadata(const GateSpec& spec);

Value gate_spec_to_json(const GateSpec& spec);
// Parses a gate spec; the metadata mirror is derived, not read.
GateSpec gate_spec_from_json(const Value& j);

struct IngestReport {
    std::size_t accepted = 0;  // input records taken from the batch
    std::size_t derived = 0;   // records the dataflow wrote to the store
};

struct OPortView {
    std::string oport;
    std::vector<DataRecord> records;
    std::vector<std::uint64_t> seqs;  // parallel to records
    std::uint64_t head_seq = 0;       // last assigned event seq
    std::size_t dropped = 0;          // records failing the oport schema
};

// Push-style view event stream with an acknowledged cursor.
class Subscription {
public:
    struct Event {
        std::uint64_t seq = 0;
        DataRecord record;
    };

    // Blocks up to timeout_ms for the next undelivered event.
    std::optional<Event> poll(int timeout_ms = 1000);
    void ack(std::uint64_t seq);
    std::uint64_t acked() const;
    void close();
    bool closed() const;

private:
    friend class Gate;
    void push(const Event& e);

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Event> queue_;
    std::uint64_t acked_ = 0;
    bool closed_ = false;
};

// A live gate: ingestion through iports, an append-only store, cached oport
// views, and query/watch serving. One gate type serves consumers and
// contributors alike; there is no producer-only or consumer-only variant.
class Gate {
public:
    const GateSpec& spec() const { return spec_; }
    const GateMetadata& metadata() const { return spec_.metadata; }
    const GateAddress& address() const { return spec_.address; }
    const Principal& principal() const { return spec_.principal; }

    IngestReport ingest(const std::string& iport, const Batch& batch);

    OPortView materialize(const std::string& oport);

    Batch query(const std::string& oport, const Principal& principal,
                const std::optional<FilterOp>& filter = std::nullopt);

    std::shared_ptr<Subscription> watch(const std::string& oport,
                                        const Principal& principal,
                                        std::uint64_t from_seq);

    std::vector<StoredRecord> scan_all() const { return store_->scan_all(); }

    const OPortSpec* find_oport(const std::string& name) const;
    const IPortSpec* find_iport(const std::string& name) const;

private:
    friend std::unique_ptr<Gate> create_gate(GateSpec, ProvenanceLedger*);
    Gate(GateSpec spec, std::unique_ptr<DataStore> store, ProvenanceLedger* ledger);

    struct ViewState {
        bool cache_valid = false;
        Batch cache;
        std::size_t dropped = 0;
        std::vector<DataRecord> event_log;  // seq of log[i] is i+1
        std::set<RecordId> logged_ids;
        std::vector<std::weak_ptr<Subscription>> subscribers;
    };

    void record_provenance(const DataRecord& r, const std::string& iport);
    ViewState& refresh_view(const std::string& oport,
                            std::set<std::string>& in_progress);
    Batch view_records(ViewState& vs) const { return vs.cache; }

    GateSpec spec_;
    std::unique_ptr<DataStore> store_;
    ProvenanceLedger* ledger_;  // optional, not owned
    mutable std::recursive_mutex mu_;
    std::map<std::string, ViewState> views_;
};

// Validates the spec, opens (or recovers) the store, and brings the gate
// live. Throws InvalidSpec / StoreUnavailable.
std::unique_ptr<Gate> create_gate(GateSpec spec, ProvenanceLedger* ledger = nullptr);

}  // namespace ioda
