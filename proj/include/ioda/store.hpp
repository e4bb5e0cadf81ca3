#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ioda/record.hpp"

namespace ioda {

struct StoredRecord {
    std::string iport;  // tag of the ingesting iport
    DataRecord record;

    bool operator==(const StoredRecord&) const = default;
};

// Append-only record log. Records are immutable once appended; append order
// is total. The file backend persists one record per line and recovers the
// log on reopen.
class DataStore {
public:
    virtual ~DataStore() = default;

    virtual void append(const StoredRecord& r) = 0;
    virtual std::vector<StoredRecord> scan_all() const = 0;
    virtual std::vector<StoredRecord> scan_iport(const std::string& iport) const = 0;
    virtual std::size_t size() const = 0;
};

std::unique_ptr<DataStore> make_memory_store();

// Throws StoreUnavailable when the path cannot be opened for append.
std::unique_ptr<DataStore> make_file_store(const std::string& path);

}  // namespace ioda
