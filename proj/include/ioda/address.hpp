#pragma once

#include <optional>
#include <string>

#include "ioda/errors.hpp"

namespace ioda {

// Hierarchical name `domain/gate` or `domain/gate/oport`. Segments are
// lowercase [a-z0-9._-], non-empty, at most 64 characters.
struct GateAddress {
    std::string domain;
    std::string gate;
    std::optional<std::string> oport;

    bool operator==(const GateAddress&) const = default;
    auto operator<=>(const GateAddress&) const = default;

    // domain/gate without the oport component.
    GateAddress gate_only() const { return {domain, gate, std::nullopt}; }

    GateAddress with_oport(std::string name) const {
        return {domain, gate, std::move(name)};
    }
};

bool valid_segment(const std::string& s);

// Throws MalformedAddress on empty segments, illegal characters, or a
// segment count outside {2, 3}.
GateAddress parse_address(const std::string& text);

std::string format_address(const GateAddress& a);

}  // namespace ioda
