#include "qsync/tag_io.hpp"

#include <array>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace qsync {

namespace {

constexpr char kMagic[8] = {'Q', 'S', 'Y', 'N', 'C', 'T', 'G', '1'};
constexpr std::size_t kBinaryHeaderSize = 64;
constexpr std::size_t kEpochLabelSize = 20;

[[noreturn]] void fail(IoErrorKind kind, const std::filesystem::path& path,
                       const std::string& detail) {
    throw IoError(kind, path.string() + ": " + detail);
}

void check_sorted(const TagStream& tags, const std::filesystem::path& path) {
    const std::int64_t bad = first_unsorted_index(tags);
    if (bad >= 0) {
        fail(IoErrorKind::unsorted, path,
             "tags not sorted at index " + std::to_string(bad));
    }
}

void put_u32(std::ofstream& out, std::uint32_t v) {
    std::array<unsigned char, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b.data()), b.size());
}

void put_u64(std::ofstream& out, std::uint64_t v) {
    std::array<unsigned char, 8> b{};
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b.data()), b.size());
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace

void write_tags_text(const std::filesystem::path& path, const TagStream& tags,
                     const TagFileHeader& header) {
    check_sorted(tags, path);
    std::ofstream out(path);
    if (!out) fail(IoErrorKind::open_failed, path, "cannot open for writing");
    out << "# qsync-tags " << header.version << "\n";
    out << "# channel " << header.channel << "\n";
    out << "# epoch " << (header.epoch_label.empty() ? "-" : header.epoch_label) << "\n";
    out << "# resolution_ps " << header.resolution_ps << "\n";
    out << "# count " << tags.size() << "\n";
    for (picoseconds t : tags) out << t << "\n";
    if (!out) fail(IoErrorKind::open_failed, path, "write failed");
}

TagStream read_tags_text(const std::filesystem::path& path, TagFileHeader* header) {
    std::ifstream in(path);
    if (!in) fail(IoErrorKind::open_failed, path, "cannot open for reading");

    TagFileHeader hdr;
    bool have_count = false;
    std::uint64_t declared = 0;
    std::string line;
    TagStream tags;
    std::size_t line_no = 0;
    bool in_header = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (!in_header) {
                fail(IoErrorKind::bad_header, path,
                     "header line " + std::to_string(line_no) + " after data");
            }
            std::istringstream ls(line.substr(1));
            std::string key;
            ls >> key;
            if (key == "qsync-tags") {
                ls >> hdr.version;
                if (hdr.version != 1) {
                    fail(IoErrorKind::bad_header, path,
                         "unsupported version " + std::to_string(hdr.version));
                }
            } else if (key == "channel") {
                ls >> hdr.channel;
            } else if (key == "epoch") {
                ls >> hdr.epoch_label;
            } else if (key == "resolution_ps") {
                std::int64_t r = 0;
                ls >> r;
                if (r < 1) fail(IoErrorKind::bad_header, path, "resolution_ps < 1");
                hdr.resolution_ps = r;
            } else if (key == "count") {
                ls >> declared;
                have_count = true;
            } else {
                fail(IoErrorKind::bad_header, path,
                     "unknown header key '" + key + "' at line " + std::to_string(line_no));
            }
            if (ls.fail()) {
                fail(IoErrorKind::bad_header, path,
                     "malformed header at line " + std::to_string(line_no));
            }
            continue;
        }
        in_header = false;
        picoseconds value = 0;
        const char* begin = line.data();
        const char* end = line.data() + line.size();
        auto [ptr, ec] = std::from_chars(begin, end, value);
        if (ec != std::errc() || ptr != end) {
            fail(IoErrorKind::bad_value, path,
                 "bad timestamp at line " + std::to_string(line_no));
        }
        tags.push_back(value);
    }
    if (have_count && declared != tags.size()) {
        fail(IoErrorKind::bad_header, path,
             "count mismatch: header says " + std::to_string(declared) + ", body has " +
                 std::to_string(tags.size()));
    }
    check_sorted(tags, path);
    hdr.count = tags.size();
    if (header) *header = hdr;
    return tags;
}

void write_tags_binary(const std::filesystem::path& path, const TagStream& tags,
                       const TagFileHeader& header) {
    check_sorted(tags, path);
    for (picoseconds t : tags) {
        if (t < 0) {
            fail(IoErrorKind::bad_value, path,
                 "binary format stores unsigned picoseconds; negative tag found");
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(IoErrorKind::open_failed, path, "cannot open for writing");
    out.write(kMagic, sizeof(kMagic));
    put_u32(out, static_cast<std::uint32_t>(header.version));
    put_u32(out, static_cast<std::uint32_t>(header.channel));
    put_u64(out, static_cast<std::uint64_t>(header.resolution_ps));
    put_u64(out, tags.size());
    std::array<char, kEpochLabelSize> label{};
    std::strncpy(label.data(), header.epoch_label.c_str(), kEpochLabelSize - 1);
    out.write(label.data(), label.size());
    std::array<char, kBinaryHeaderSize - 8 - 4 - 4 - 8 - 8 - kEpochLabelSize> reserved{};
    out.write(reserved.data(), reserved.size());
    for (picoseconds t : tags) put_u64(out, static_cast<std::uint64_t>(t));
    if (!out) fail(IoErrorKind::open_failed, path, "write failed");
}

TagStream read_tags_binary(const std::filesystem::path& path, TagFileHeader* header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(IoErrorKind::open_failed, path, "cannot open for reading");
    std::array<unsigned char, kBinaryHeaderSize> hdr_bytes{};
    in.read(reinterpret_cast<char*>(hdr_bytes.data()), hdr_bytes.size());
    if (in.gcount() != static_cast<std::streamsize>(kBinaryHeaderSize)) {
        fail(IoErrorKind::truncated, path, "file shorter than the 64-byte header");
    }
    if (std::memcmp(hdr_bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        fail(IoErrorKind::bad_header, path, "bad magic bytes");
    }
    TagFileHeader hdr;
    hdr.version = static_cast<int>(get_u32(hdr_bytes.data() + 8));
    if (hdr.version != 1) {
        fail(IoErrorKind::bad_header, path,
             "unsupported version " + std::to_string(hdr.version));
    }
    hdr.channel = static_cast<int>(get_u32(hdr_bytes.data() + 12));
    hdr.resolution_ps = static_cast<picoseconds>(get_u64(hdr_bytes.data() + 16));
    hdr.count = get_u64(hdr_bytes.data() + 24);
    const char* label = reinterpret_cast<const char*>(hdr_bytes.data() + 32);
    hdr.epoch_label.assign(label, strnlen(label, kEpochLabelSize));

    TagStream tags;
    tags.reserve(hdr.count);
    std::array<unsigned char, 8> word{};
    for (std::uint64_t i = 0; i < hdr.count; ++i) {
        in.read(reinterpret_cast<char*>(word.data()), word.size());
        if (in.gcount() != 8) {
            fail(IoErrorKind::truncated, path,
                 "body ends after " + std::to_string(i) + " of " +
                     std::to_string(hdr.count) + " tags");
        }
        tags.push_back(static_cast<picoseconds>(get_u64(word.data())));
    }
    check_sorted(tags, path);
    if (header) *header = hdr;
    return tags;
}

TagStream read_tags(const std::filesystem::path& path, TagFileHeader* header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(IoErrorKind::open_failed, path, "cannot open for reading");
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    in.close();
    if (in.gcount() == 8 && std::memcmp(magic.data(), kMagic, 8) == 0) {
        return read_tags_binary(path, header);
    }
    return read_tags_text(path, header);
}

void write_truth(const std::filesystem::path& path, const TruthRecord& truth) {
    nlohmann::json j;
    j["duration_s"] = truth.duration_s;
    j["users"] = nlohmann::json::array();
    for (std::size_t u = 0; u < truth.user_labels.size(); ++u) {
        j["users"].push_back({{"label", truth.user_labels[u]},
                              {"clock", truth.user_clock_index[u]},
                              {"delay_ps", truth.channel_delay_ps[u]}});
    }
    j["clocks"] = nlohmann::json::array();
    for (const ClockGroupTruth& c : truth.clocks) {
        nlohmann::json path_json = nlohmann::json::array();
        for (const ClockPathSample& s : c.path) {
            path_json.push_back({s.t_s, s.offset_ps, s.skew_ps_per_s});
        }
        j["clocks"].push_back({{"name", c.name},
                               {"initial_offset_ps", c.params.initial_offset_ps},
                               {"skew", c.params.skew},
                               {"sigma_x", c.params.random_walk_offset_density},
                               {"sigma_y", c.params.random_walk_freq_density},
                               {"seed", c.params.seed},
                               {"path", std::move(path_json)}});
    }
    std::ofstream out(path);
    if (!out) fail(IoErrorKind::open_failed, path, "cannot open for writing");
    out << j.dump(1) << "\n";
    if (!out) fail(IoErrorKind::open_failed, path, "write failed");
}

TruthRecord read_truth(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(IoErrorKind::open_failed, path, "cannot open for reading");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(IoErrorKind::bad_value, path, e.what());
    }
    TruthRecord truth;
    try {
        truth.duration_s = j.at("duration_s").get<double>();
        for (const auto& u : j.at("users")) {
            truth.user_labels.push_back(u.at("label").get<std::string>());
            truth.user_clock_index.push_back(u.at("clock").get<int>());
            truth.channel_delay_ps.push_back(u.at("delay_ps").get<double>());
        }
        for (const auto& c : j.at("clocks")) {
            ClockGroupTruth g;
            g.name = c.at("name").get<std::string>();
            g.params.initial_offset_ps = c.at("initial_offset_ps").get<double>();
            g.params.skew = c.at("skew").get<double>();
            g.params.random_walk_offset_density = c.at("sigma_x").get<double>();
            g.params.random_walk_freq_density = c.at("sigma_y").get<double>();
            g.params.seed = c.at("seed").get<std::uint64_t>();
            for (const auto& s : c.at("path")) {
                g.path.push_back(ClockPathSample{s.at(0).get<double>(),
                                                 s.at(1).get<double>(),
                                                 s.at(2).get<double>()});
            }
            truth.clocks.push_back(std::move(g));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(IoErrorKind::bad_value, path, e.what());
    }
    return truth;
}

}  // namespace qsync
