#include "qsync/types.hpp"

namespace qsync {

bool is_sorted_stream(const TagStream& s) {
    return first_unsorted_index(s) < 0;
}

std::int64_t first_unsorted_index(const TagStream& s) {
    for (std::size_t i = 1; i < s.size(); ++i) {
        if (s[i] < s[i - 1]) return static_cast<std::int64_t>(i);
    }
    return -1;
}

}  // namespace qsync
