#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace malimg {

// Base of every domain error thrown by this library. `kind()` is the stable
// machine-readable category; what() prepends it to the message.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define MALIMG_DEFINE_ERROR(NAME)                                        \
    class NAME : public Error {                                          \
    public:                                                              \
        explicit NAME(const std::string& msg) : Error(#NAME, msg) {}     \
    }

MALIMG_DEFINE_ERROR(IngestError);
MALIMG_DEFINE_ERROR(LabelError);
MALIMG_DEFINE_ERROR(EmptyCorpus);
MALIMG_DEFINE_ERROR(SpecError);
MALIMG_DEFINE_ERROR(FoldError);
MALIMG_DEFINE_ERROR(EmptyInput);
MALIMG_DEFINE_ERROR(SizeError);
MALIMG_DEFINE_ERROR(LevelError);
MALIMG_DEFINE_ERROR(ShapeError);
MALIMG_DEFINE_ERROR(DegenerateData);
MALIMG_DEFINE_ERROR(ConfigError);
MALIMG_DEFINE_ERROR(NumericError);
MALIMG_DEFINE_ERROR(EmptySet);
MALIMG_DEFINE_ERROR(ProtocolError);

#undef MALIMG_DEFINE_ERROR

}  // namespace malimg
