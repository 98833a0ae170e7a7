#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "qsync/config.hpp"
#include "qsync/rng.hpp"
#include "qsync/tag_io.hpp"

using namespace qsync;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("qsync_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

TagStream random_sorted(Rng& rng, std::size_t n) {
    TagStream s(n);
    picoseconds t = 0;
    for (auto& v : s) {
        t += static_cast<picoseconds>(rng.uniform_int(1'000'000));
        v = t;
    }
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("text and binary round trips preserve every tag") {
    TempDir dir;
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const TagStream tags = random_sorted(rng, rng.uniform_int(10'000));
        TagFileHeader hdr;
        hdr.channel = trial;
        hdr.epoch_label = "trial";
        const fs::path txt = dir.path / "tags.txt";
        const fs::path bin = dir.path / "tags.qtag";
        write_tags_text(txt, tags, hdr);
        write_tags_binary(bin, tags, hdr);

        TagFileHeader h1, h2;
        CHECK(read_tags_text(txt, &h1) == tags);
        CHECK(read_tags_binary(bin, &h2) == tags);
        CHECK(h1.channel == trial);
        CHECK(h2.channel == trial);
        CHECK(h2.epoch_label == "trial");
        CHECK(h1.count == tags.size());

        // format sniffing
        CHECK(read_tags(txt) == tags);
        CHECK(read_tags(bin) == tags);
    }
}

TEST_CASE("rewriting a stream is byte-identical") {
    TempDir dir;
    Rng rng(7);
    const TagStream tags = random_sorted(rng, 5000);
    TagFileHeader hdr;
    write_tags_binary(dir.path / "a.qtag", tags, hdr);
    write_tags_binary(dir.path / "b.qtag", tags, hdr);
    CHECK(slurp(dir.path / "a.qtag") == slurp(dir.path / "b.qtag"));
    write_tags_text(dir.path / "a.txt", tags, hdr);
    write_tags_text(dir.path / "b.txt", tags, hdr);
    CHECK(slurp(dir.path / "a.txt") == slurp(dir.path / "b.txt"));
}

TEST_CASE("unsorted files are rejected naming the first offending index") {
    TempDir dir;
    const fs::path p = dir.path / "bad.txt";
    {
        std::ofstream out(p);
        out << "# qsync-tags 1\n100\n50\n200\n";
    }
    try {
        read_tags_text(p);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(e.kind() == IoErrorKind::unsorted);
        CHECK(std::string(e.what()).find("index 1") != std::string::npos);
        CHECK(std::string(e.what()).find(p.string()) != std::string::npos);
    }
}

TEST_CASE("writers refuse unsorted streams") {
    TempDir dir;
    const TagStream bad = {5, 3};
    CHECK_THROWS_AS(write_tags_text(dir.path / "x.txt", bad, {}), IoError);
    CHECK_THROWS_AS(write_tags_binary(dir.path / "x.qtag", bad, {}), IoError);
}

TEST_CASE("binary header and body corruption produce distinct error kinds") {
    TempDir dir;
    Rng rng(3);
    const TagStream tags = random_sorted(rng, 100);
    const fs::path p = dir.path / "t.qtag";
    write_tags_binary(p, tags, {});

    SUBCASE("truncated body") {
        fs::resize_file(p, fs::file_size(p) - 4);
        try {
            read_tags_binary(p);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.kind() == IoErrorKind::truncated);
        }
    }
    SUBCASE("truncated header") {
        fs::resize_file(p, 10);
        try {
            read_tags_binary(p);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.kind() == IoErrorKind::truncated);
        }
    }
    SUBCASE("bad magic") {
        std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXXXXXX", 8);
        f.close();
        try {
            read_tags_binary(p);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(e.kind() == IoErrorKind::bad_header);
        }
    }
}

TEST_CASE("text count mismatch and garbage values are rejected") {
    TempDir dir;
    const fs::path p = dir.path / "t.txt";
    {
        std::ofstream out(p);
        out << "# qsync-tags 1\n# count 3\n1\n2\n";
    }
    CHECK_THROWS_AS(read_tags_text(p), IoError);
    {
        std::ofstream out(p);
        out << "# qsync-tags 1\n1\nbanana\n";
    }
    try {
        read_tags_text(p);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(e.kind() == IoErrorKind::bad_value);
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
}

TEST_CASE("truth record round trip") {
    TempDir dir;
    TruthRecord truth;
    truth.duration_s = 12.0;
    truth.user_labels = {"A", "B"};
    truth.user_clock_index = {0, 1};
    truth.channel_delay_ps = {0.0, 5000.0};
    ClockGroupTruth g0;
    g0.name = "A";
    g0.params.initial_offset_ps = 25191.0;
    g0.params.seed = 42;
    g0.path = {{0.0, 25191.0, 0.0}, {12.0, 25195.0, 0.4}};
    truth.clocks.push_back(g0);
    ClockGroupTruth g1;
    g1.name = "B";
    g1.path = {{0.0, 0.0, 0.0}, {12.0, 0.0, 0.0}};
    truth.clocks.push_back(g1);

    const fs::path p = dir.path / "truth.json";
    write_truth(p, truth);
    const TruthRecord back = read_truth(p);
    CHECK(back.duration_s == truth.duration_s);
    CHECK(back.user_labels == truth.user_labels);
    CHECK(back.channel_delay_ps == truth.channel_delay_ps);
    REQUIRE(back.clocks.size() == 2);
    CHECK(back.clocks[0].params.initial_offset_ps == 25191.0);
    CHECK(back.clocks[0].path.size() == 2);
    CHECK(back.clock_offset_at(0, 6.0) == doctest::Approx(25193.0));
}

TEST_CASE("minimal two-user config parses with defaults") {
    const NetworkConfig cfg = parse_config("[user A]\n[user B]\n", "inline");
    CHECK(cfg.n_users() == 2);
    CHECK(cfg.star.source.pair_rate == 1e5);
    CHECK(cfg.star.splitter_ports == 8);
    CHECK(cfg.histogram.tau_window_ps == 500000);
    CHECK(cfg.histogram.bin_width_ps == 32);
    CHECK(cfg.filter.window_s == 30.0);
    CHECK(cfg.filter.downweight_factor == 100.0);
    CHECK(cfg.closure.threshold_sigma == 5.0);
    CHECK(cfg.star.users[0].detector.efficiency == 0.2);
    CHECK(cfg.star.users[0].detector.dark_rate == 500.0);
    CHECK(cfg.star.users[0].clock_group == "A");
    CHECK(cfg.rolling);
    CHECK(cfg.user_index("B") == 1);
    CHECK(cfg.user_index("Z") == -1);
}

TEST_CASE("out-of-range values name the key and bounds") {
    try {
        parse_config("[user A]\nefficiency = 1.5\n[user B]\n", "inline");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("efficiency") != std::string::npos);
        CHECK(msg.find("inline:2") != std::string::npos);
    }
}

TEST_CASE("unknown keys and sections are rejected") {
    CHECK_THROWS_AS(parse_config("[user A]\nefficency = 0.5\n[user B]\n", "x"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config("[user A]\n[user B]\n[sauce]\npair_rate=1\n", "x"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config("[source]\npair_rate\n[user A]\n[user B]\n", "x"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config("[filter]\nmode = diagonal\n[user A]\n[user B]\n", "x"),
                    ConfigError);
}

TEST_CASE("duplicate keys and sections are rejected") {
    CHECK_THROWS_AS(parse_config("[source]\npair_rate=1\npair_rate=2\n[user A]\n[user B]\n", "x"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config("[source]\n[source]\n[user A]\n[user B]\n", "x"),
                    ConfigError);
}

TEST_CASE("fewer than two users is a config error") {
    CHECK_THROWS_AS(parse_config("[user A]\n", "x"), ConfigError);
}

TEST_CASE("clock groups must agree on their clock parameters") {
    const std::string good =
        "[user A]\nclock_group = s1\nclock_sigma_x = 5\n"
        "[user B]\nclock_group = s1\nclock_sigma_x = 5\n";
    CHECK(parse_config(good, "x").star.users[1].clock_group == "s1");
    const std::string bad =
        "[user A]\nclock_group = s1\nclock_sigma_x = 5\n"
        "[user B]\nclock_group = s1\nclock_sigma_x = 9\n";
    CHECK_THROWS_AS(parse_config(bad, "x"), ConfigError);
}

TEST_CASE("overrides rewrite values before validation") {
    const NetworkConfig cfg = parse_config(
        "[source]\npair_rate = 1e4\n[user A]\n[user B]\n", "inline",
        {"source.pair_rate=2e6", "user.B.efficiency=0.9", "filter.mode=full"});
    CHECK(cfg.star.source.pair_rate == 2e6);
    CHECK(cfg.star.users[1].detector.efficiency == 0.9);
    CHECK(!cfg.rolling);
    CHECK_THROWS_AS(
        parse_config("[user A]\n[user B]\n", "inline", {"user.A.banana=1"}),
        ConfigError);
    CHECK_THROWS_AS(parse_config("[user A]\n[user B]\n", "inline", {"garbage"}),
                    ConfigError);
}

TEST_CASE("config echo is a parseable fixed point") {
    const NetworkConfig cfg = parse_config(
        "[source]\nduration = 4\n"
        "[user A]\nclock_offset_ps = 25191\nclock_group = station1\n"
        "[user B]\nclock_offset_ps = 25191\nclock_group = station1\n",
        "inline");
    const std::string echo = config_echo(cfg);
    const NetworkConfig reparsed = parse_config(echo, "echo");
    CHECK(config_echo(reparsed) == echo);
    CHECK(reparsed.star.users[0].clock.initial_offset_ps == 25191.0);
    CHECK(reparsed.star.users[1].clock_group == "station1");
}
