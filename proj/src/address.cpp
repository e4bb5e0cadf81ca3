#include "ioda/address.hpp"

#include <vector>

namespace ioda {

bool valid_segment(const std::string& s) {
    if (s.empty() || s.size() > 64) return false;
    for (char c : s) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
                  c == '.' || c == '_' || c == '-';
        if (!ok) return false;
    }
    return true;
}

GateAddress parse_address(const std::string& text) {
    std::vector<std::string> segs;
    std::size_t start = 0;
    while (true) {
        std::size_t slash = text.find('/', start);
        if (slash == std::string::npos) {
            segs.push_back(text.substr(start));
            break;
        }
        segs.push_back(text.substr(start, slash - start));
        start = slash + 1;
    }
    if (segs.size() != 2 && segs.size() != 3)
        throw MalformedAddress("expected 2 or 3 segments in '" + text + "'");
    for (const auto& s : segs) {
        if (!valid_segment(s))
            throw MalformedAddress("bad segment '" + s + "' in '" + text + "'");
    }
    GateAddress a{segs[0], segs[1], std::nullopt};
    if (segs.size() == 3) a.oport = segs[2];
    return a;
}

std::string format_address(const GateAddress& a) {
    std::string out = a.domain + "/" + a.gate;
    if (a.oport) out += "/" + *a.oport;
    return out;
}

}  // namespace ioda
