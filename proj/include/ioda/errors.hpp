#pragma once

#include <stdexcept>
#include <string>

namespace ioda {

// Error taxonomy shared across modules. Every failure surfaced to callers
// carries a stable code string so wire ERROR frames and CLI diagnostics can
// round-trip the category without parsing prose.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(code + ": " + what), code_(std::move(code)) {}

    const std::string& code() const { return code_; }

private:
    std::string code_;
};

#define IODA_ERROR(Name)                                       \
    class Name : public Error {                                \
    public:                                                    \
        explicit Name(const std::string& what)                 \
            : Error(#Name, what) {}                            \
    };

IODA_ERROR(MalformedAddress)
IODA_ERROR(TypeMismatch)
IODA_ERROR(UnresolvedJoinSource)
IODA_ERROR(InvalidSpec)
IODA_ERROR(StoreUnavailable)
IODA_ERROR(UnknownIPort)
IODA_ERROR(UnknownOPort)
IODA_ERROR(AccessDenied)
IODA_ERROR(WrongDomain)
IODA_ERROR(NotFound)
IODA_ERROR(UnknownPeer)
IODA_ERROR(AuthFailed)
IODA_ERROR(ProtocolViolation)
IODA_ERROR(TransportClosed)
IODA_ERROR(SessionClosed)
IODA_ERROR(ActivationFailed)
IODA_ERROR(UnknownRecord)
IODA_ERROR(LedgerViolation)
IODA_ERROR(ParseError)
IODA_ERROR(ValidationError)

#undef IODA_ERROR

}  // namespace ioda
