#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace qsync {

// All timestamps are integer picoseconds on a user's local clock.
using picoseconds = std::int64_t;

inline constexpr double kPsPerSecond = 1e12;

inline picoseconds ps_from_seconds(double s) {
    return static_cast<picoseconds>(s * kPsPerSecond + (s >= 0 ? 0.5 : -0.5));
}

inline double seconds_from_ps(picoseconds t) {
    return static_cast<double>(t) / kPsPerSecond;
}

struct TimeTag {
    int channel = 0;
    picoseconds t_local = 0;

    friend auto operator<=>(const TimeTag&, const TimeTag&) = default;
};

using TagStream = std::vector<picoseconds>;

// Users are labeled A, B, C, ... in reports and file names.
inline std::string user_label(int index) {
    std::string s;
    do {
        s.insert(s.begin(), static_cast<char>('A' + index % 26));
        index = index / 26 - 1;
    } while (index >= 0);
    return s;
}

inline std::string pair_label(int a, int b) {
    return user_label(a) + "-" + user_label(b);
}

bool is_sorted_stream(const TagStream& s);

// Index of the first out-of-order element, -1 if sorted.
std::int64_t first_unsorted_index(const TagStream& s);

}  // namespace qsync
