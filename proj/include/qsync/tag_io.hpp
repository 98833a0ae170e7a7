#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "qsync/simulator.hpp"
#include "qsync/types.hpp"

namespace qsync {

enum class IoErrorKind {
    open_failed,
    bad_header,
    bad_value,
    unsorted,
    truncated,
};

class IoError : public std::runtime_error {
public:
    IoError(IoErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    IoErrorKind kind() const { return kind_; }

private:
    IoErrorKind kind_;
};

struct TagFileHeader {
    int version = 1;
    int channel = 0;
    std::string epoch_label;  // at most 19 bytes in the binary format
    picoseconds resolution_ps = 1;
    std::uint64_t count = 0;
};

// Text format: '#'-prefixed header lines (format, channel, epoch,
// resolution_ps, count) followed by one decimal picosecond value per line.
void write_tags_text(const std::filesystem::path& path, const TagStream& tags,
                     const TagFileHeader& header);
TagStream read_tags_text(const std::filesystem::path& path,
                         TagFileHeader* header = nullptr);

// Binary format: fixed 64-byte little-endian header (magic "QSYNCTG1",
// u32 version, u32 channel, u64 resolution_ps, u64 count, 20-byte epoch
// label, 12 reserved bytes) followed by count u64 picosecond values.
void write_tags_binary(const std::filesystem::path& path, const TagStream& tags,
                       const TagFileHeader& header);
TagStream read_tags_binary(const std::filesystem::path& path,
                           TagFileHeader* header = nullptr);

// Dispatch on the magic bytes.
TagStream read_tags(const std::filesystem::path& path,
                    TagFileHeader* header = nullptr);

// Truth records round-trip through JSON.
void write_truth(const std::filesystem::path& path, const TruthRecord& truth);
TruthRecord read_truth(const std::filesystem::path& path);

}  // namespace qsync
