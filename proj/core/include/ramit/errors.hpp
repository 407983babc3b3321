#pragma once

#include <stdexcept>
#include <string>

namespace ramit {

// Every contract violation throws a named error type so callers and tests
// can distinguish failure modes without parsing messages.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define RAMIT_DEFINE_ERROR(Name)                                          \
    struct Name : Error {                                                  \
        explicit Name(const std::string& msg) : Error(#Name ": " + msg) {} \
    }

RAMIT_DEFINE_ERROR(ShapeMismatch);
RAMIT_DEFINE_ERROR(DivisionByZero);
RAMIT_DEFINE_ERROR(InvalidAxis);
RAMIT_DEFINE_ERROR(GroupMismatch);
RAMIT_DEFINE_ERROR(ChannelNotDivisible);
RAMIT_DEFINE_ERROR(NotScalar);
RAMIT_DEFINE_ERROR(DetachedNode);
RAMIT_DEFINE_ERROR(NotDivisible);
RAMIT_DEFINE_ERROR(MissingBias);
RAMIT_DEFINE_ERROR(OddDimension);
RAMIT_DEFINE_ERROR(InvalidScale);
RAMIT_DEFINE_ERROR(BadInputShape);
RAMIT_DEFINE_ERROR(BadConfig);
RAMIT_DEFINE_ERROR(RegionOutOfBounds);
RAMIT_DEFINE_ERROR(IoError);
RAMIT_DEFINE_ERROR(UnknownParameter);
RAMIT_DEFINE_ERROR(UnsupportedFormat);
RAMIT_DEFINE_ERROR(CorruptHeader);
RAMIT_DEFINE_ERROR(TruncatedData);
RAMIT_DEFINE_ERROR(MisalignedPair);
RAMIT_DEFINE_ERROR(PatchTooLarge);
RAMIT_DEFINE_ERROR(EmptyDataset);
RAMIT_DEFINE_ERROR(NotRgb);

#undef RAMIT_DEFINE_ERROR

}  // namespace ramit
