#include "ioda/store.hpp"

#include <fstream>
#include <mutex>

#include "ioda/errors.hpp"

namespace ioda {

namespace {

class MemoryStore : public DataStore {
public:
    void append(const StoredRecord& r) override {
        std::lock_guard lock(mu_);
        log_.push_back(r);
    }

    std::vector<StoredRecord> scan_all() const override {
        std::lock_guard lock(mu_);
        return log_;
    }

    std::vector<StoredRecord> scan_iport(const std::string& iport) const override {
        std::lock_guard lock(mu_);
        std::vector<StoredRecord> out;
        for (const auto& r : log_)
            if (r.iport == iport) out.push_back(r);
        return out;
    }

    std::size_t size() const override {
        std::lock_guard lock(mu_);
        return log_.size();
    }

protected:
    mutable std::mutex mu_;
    std::vector<StoredRecord> log_;
};

// Line format: iport=<name>\t<canonical record json>\n
class FileStore : public MemoryStore {
public:
    explicit FileStore(const std::string& path) : path_(path) {
        std::ifstream in(path_);
        if (in) {
            std::string line;
            std::size_t lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                if (line.empty()) continue;
                if (line.rfind("iport=", 0) != 0)
                    throw StoreUnavailable(path_ + ":" + std::to_string(lineno) +
                                           ": missing iport prefix");
                auto tab = line.find('\t');
                if (tab == std::string::npos)
                    throw StoreUnavailable(path_ + ":" + std::to_string(lineno) +
                                           ": missing tab separator");
                StoredRecord r;
                r.iport = line.substr(6, tab - 6);
                r.record = from_canonical(line.substr(tab + 1));
                log_.push_back(std::move(r));
            }
        }
        out_.open(path_, std::ios::app);
        if (!out_) throw StoreUnavailable("cannot open '" + path_ + "' for append");
    }

    void append(const StoredRecord& r) override {
        std::lock_guard lock(mu_);
        out_ << "iport=" << r.iport << '\t' << to_canonical(r.record) << '\n';
        out_.flush();
        if (!out_) throw StoreUnavailable("write failed on '" + path_ + "'");
        log_.push_back(r);
    }

private:
    std::string path_;
    std::ofstream out_;
};

}  // namespace

std::unique_ptr<DataStore> make_memory_store() {
    return std::make_unique<MemoryStore>();
}

std::unique_ptr<DataStore> make_file_store(const std::string& path) {
    return std::make_unique<FileStore>(path);
}

}  // namespace ioda
