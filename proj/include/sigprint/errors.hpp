#pragma once

#include <stdexcept>
#include <string>

namespace sigprint {

/// Base class for all toolkit errors. CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// volume
class UnknownFormat : public Error { using Error::Error; };
class CorruptHeader : public Error { using Error::Error; };
class NonFinite : public Error { using Error::Error; };
class IoFailure : public Error { using Error::Error; };
class VolumeTooSmall : public Error { using Error::Error; };

// index
class EmptyCollection : public Error { using Error::Error; };
class UnresolvableRef : public Error { using Error::Error; };
class EmptyForeignSet : public Error { using Error::Error; };

// jaccard
class NotIndexed : public Error { using Error::Error; };
class EmptySignature : public Error { using Error::Error; };

// curation
class DuplicateImageId : public Error { using Error::Error; };
class MissingMetadata : public Error { using Error::Error; };
class LabelCoverageGap : public Error { using Error::Error; };
class EmptySample : public Error { using Error::Error; };
class InsufficientDistribution : public Error { using Error::Error; };

} // namespace sigprint
