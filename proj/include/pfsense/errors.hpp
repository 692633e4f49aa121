#pragma once

#include <stdexcept>
#include <string>

namespace pfsense {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// numkit
struct DimensionMismatch : Error { using Error::Error; };
struct SingularMatrix : Error { using Error::Error; };
struct NoConvergence : Error { using Error::Error; };

// netmodel
struct MalformedCase : Error { using Error::Error; };
struct MissingMatrix : Error { using Error::Error; };
struct MultipleSlack : Error { using Error::Error; };
struct DanglingBranch : Error { using Error::Error; };
struct ZeroImpedanceBranch : Error { using Error::Error; };

// powerflow / sensitivity
struct SingularJacobian : Error { using Error::Error; };
struct SingularBlock : Error { using Error::Error; };
struct ZeroVoltage : Error { using Error::Error; };

// observability
struct DomainError : Error { using Error::Error; };
struct AllZeroInjections : Error { using Error::Error; };
struct SingularM : Error { using Error::Error; };
struct SingularK : Error { using Error::Error; };

// estimation
struct SingularSDagger : Error { using Error::Error; };
struct RankDeficient : Error { using Error::Error; };
struct SingularNormalEquations : Error { using Error::Error; };
struct TooShort : Error { using Error::Error; };

// lowrank
struct EmptyGroup : Error { using Error::Error; };

// cli / io
struct UsageError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

} // namespace pfsense
