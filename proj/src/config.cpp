#include "qsync/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace qsync {

void NetworkConfig::validate() const {
    star.validate();
    histogram.validate();
    filter.validate();
    closure.validate();
    if (star.users.size() < 2) {
        throw ConfigError("at least 2 users are required");
    }
}

int NetworkConfig::user_index(const std::string& label) const {
    for (std::size_t u = 0; u < star.users.size(); ++u) {
        if (star.users[u].label == label) return static_cast<int>(u);
    }
    return -1;
}

namespace {

struct Entry {
    std::string value;
    int line = 0;
    bool used = false;
};

struct Section {
    std::string name;  // "source", "user A", ...
    int line = 0;
    std::map<std::string, Entry> entries;
};

struct RawConfig {
    std::string source_name;
    std::vector<Section> sections;

    Section* find(const std::string& name) {
        for (auto& s : sections) {
            if (s.name == name) return &s;
        }
        return nullptr;
    }

    Section& get_or_add(const std::string& name) {
        if (Section* s = find(name)) return *s;
        sections.push_back(Section{name, 0, {}});
        return sections.back();
    }
};

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail_at(const RawConfig& raw, int line, const std::string& msg) {
    std::ostringstream os;
    os << raw.source_name;
    if (line > 0) os << ":" << line;
    os << ": " << msg;
    throw ConfigError(os.str());
}

RawConfig lex_config(const std::string& text, const std::string& source_name) {
    RawConfig raw;
    raw.source_name = source_name;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    Section* current = nullptr;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t comment = line.find('#');
        if (comment != std::string::npos) line.erase(comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail_at(raw, line_no, "unterminated section header");
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (name.empty()) fail_at(raw, line_no, "empty section name");
            if (raw.find(name)) fail_at(raw, line_no, "duplicate section [" + name + "]");
            raw.sections.push_back(Section{name, line_no, {}});
            current = &raw.sections.back();
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            fail_at(raw, line_no, "expected key = value, got '" + line + "'");
        }
        if (!current) fail_at(raw, line_no, "key outside of any section");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail_at(raw, line_no, "empty key");
        if (value.empty()) fail_at(raw, line_no, "empty value for key '" + key + "'");
        if (current->entries.count(key)) {
            fail_at(raw, line_no, "duplicate key '" + key + "' in [" + current->name + "]");
        }
        current->entries[key] = Entry{value, line_no, false};
    }
    return raw;
}

// Overrides use dotted paths: section.key, or user.<LABEL>.key.
void apply_override(RawConfig& raw, const std::string& spec) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override '" + spec + "' is not key=value");
    }
    const std::string path = trim(spec.substr(0, eq));
    const std::string value = trim(spec.substr(eq + 1));
    const std::size_t dot = path.find('.');
    if (dot == std::string::npos || value.empty()) {
        throw ConfigError("override '" + spec + "' must be section.key=value");
    }
    std::string section = path.substr(0, dot);
    std::string key = path.substr(dot + 1);
    if (section == "user") {
        const std::size_t dot2 = key.find('.');
        if (dot2 == std::string::npos) {
            throw ConfigError("override '" + spec + "' must be user.<label>.key=value");
        }
        section = "user " + key.substr(0, dot2);
        key = key.substr(dot2 + 1);
    }
    Section& s = raw.get_or_add(section);
    s.entries[key] = Entry{value, 0, false};
}

class SectionReader {
public:
    SectionReader(RawConfig& raw, Section* section) : raw_(raw), section_(section) {}

    double number(const std::string& key, double fallback) {
        Entry* e = fetch(key);
        if (!e) return fallback;
        try {
            std::size_t pos = 0;
            const double v = std::stod(e->value, &pos);
            while (pos < e->value.size() && std::isspace(
                       static_cast<unsigned char>(e->value[pos]))) {
                ++pos;
            }
            if (pos != e->value.size()) throw std::invalid_argument("trailing junk");
            return v;
        } catch (const std::exception&) {
            fail_at(raw_, e->line, "key '" + key + "': expected a number, got '" +
                                       e->value + "'");
        }
    }

    double number_in(const std::string& key, double fallback, double lo, double hi) {
        const double v = number(key, fallback);
        if (v < lo || v > hi) {
            fail_at(raw_, line_of(key),
                    "key '" + key + "' = " + std::to_string(v) + " out of range [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
        }
        return v;
    }

    std::uint64_t integer(const std::string& key, std::uint64_t fallback) {
        Entry* e = fetch(key);
        if (!e) return fallback;
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(e->value.data(),
                                       e->value.data() + e->value.size(), v);
        if (ec != std::errc() || p != e->value.data() + e->value.size()) {
            fail_at(raw_, e->line,
                    "key '" + key + "': expected an integer, got '" + e->value + "'");
        }
        return v;
    }

    std::string text(const std::string& key, const std::string& fallback) {
        Entry* e = fetch(key);
        return e ? e->value : fallback;
    }

    int line_of(const std::string& key) const {
        if (!section_) return 0;
        auto it = section_->entries.find(key);
        return it == section_->entries.end() ? section_->line : it->second.line;
    }

private:
    Entry* fetch(const std::string& key) {
        if (!section_) return nullptr;
        auto it = section_->entries.find(key);
        if (it == section_->entries.end()) return nullptr;
        it->second.used = true;
        return &it->second;
    }

    RawConfig& raw_;
    Section* section_;
};

const std::vector<std::string> kKnownSections = {"source", "splitter", "histogram",
                                                 "filter", "closure"};

}  // namespace

NetworkConfig parse_config(const std::string& text, const std::string& source_name,
                           const std::vector<std::string>& overrides) {
    RawConfig raw = lex_config(text, source_name);
    for (const std::string& o : overrides) apply_override(raw, o);

    NetworkConfig cfg;

    {
        SectionReader r(raw, raw.find("source"));
        cfg.star.source.pair_rate = r.number("pair_rate", 1e5);
        cfg.star.source.duration_s = r.number("duration", 1.0);
        cfg.star.source.pair_width_ps = r.number("pair_width_ps", 0.0);
    }
    {
        SectionReader r(raw, raw.find("splitter"));
        cfg.star.splitter_ports = static_cast<int>(r.integer("ports", 8));
    }
    {
        SectionReader r(raw, raw.find("histogram"));
        cfg.histogram.tau_window_ps =
            static_cast<picoseconds>(r.number("tau_window_ps", 500000.0));
        cfg.histogram.bin_width_ps =
            static_cast<picoseconds>(r.number("bin_width_ps", 32.0));
        cfg.histogram.segment_duration_s = r.number("segment_duration", 1.0);
        cfg.histogram.peak_significance = r.number("peak_significance", 5.0);
    }
    {
        SectionReader r(raw, raw.find("filter"));
        cfg.filter.sigma_x = r.number("sigma_x", 1.0);
        cfg.filter.sigma_y = r.number("sigma_y", 1.0);
        cfg.filter.window_s = r.number("window", 30.0);
        cfg.filter.stride_s = r.number("stride", cfg.histogram.segment_duration_s);
        cfg.filter.downweight_factor = r.number("downweight_factor", 100.0);
        cfg.filter.init_sigma_x_ps =
            r.number("init_sigma_x_ps",
                     static_cast<double>(cfg.histogram.tau_window_ps) / 3.0);
        cfg.filter.init_sigma_y_ps_per_s = r.number("init_sigma_y_ps_per_s", 1e5);
        const std::string mode = r.text("mode", "rolling");
        if (mode == "rolling") {
            cfg.rolling = true;
        } else if (mode == "full") {
            cfg.rolling = false;
        } else {
            fail_at(raw, r.line_of("mode"),
                    "key 'mode': expected rolling or full, got '" + mode + "'");
        }
    }
    {
        SectionReader r(raw, raw.find("closure"));
        cfg.closure.threshold_sigma = r.number("threshold_sigma", 5.0);
        cfg.closure.max_candidates = static_cast<int>(r.integer("max_candidates", 3));
    }

    for (Section& s : raw.sections) {
        if (s.name.rfind("user ", 0) != 0) continue;
        const std::string label = trim(s.name.substr(5));
        if (label.empty()) fail_at(raw, s.line, "user section needs a label");
        UserSetup user;
        user.label = label;
        SectionReader r(raw, &s);
        user.channel.fixed_delay_ps = r.number("delay_ps", 0.0);
        user.channel.dispersion_sigma_ps = r.number("dispersion_ps", 0.0);
        user.channel.loss = r.number_in("loss", 0.0, 0.0, 1.0);
        user.detector.efficiency = r.number_in("efficiency", 0.2, 0.0, 1.0);
        user.detector.jitter_fwhm_ps = r.number("jitter_fwhm_ps", 150.0);
        user.detector.dead_time_ps = r.number("dead_time_ps", 0.0);
        user.detector.dark_rate = r.number("dark_rate", 500.0);
        user.detector.resolution_ps =
            static_cast<picoseconds>(r.integer("resolution_ps", 1));
        user.clock.initial_offset_ps = r.number("clock_offset_ps", 0.0);
        user.clock.skew = r.number_in("clock_skew", 0.0, -1e-6, 1e-6);
        user.clock.random_walk_offset_density = r.number("clock_sigma_x", 0.0);
        user.clock.random_walk_freq_density = r.number("clock_sigma_y", 0.0);
        user.clock.seed = r.integer("clock_seed", 0);
        user.clock_group = r.text("clock_group", label);
        cfg.star.users.push_back(std::move(user));
    }

    // Deterministic user order regardless of section order in the file.
    std::sort(cfg.star.users.begin(), cfg.star.users.end(),
              [](const UserSetup& a, const UserSetup& b) { return a.label < b.label; });

    for (const Section& s : raw.sections) {
        const bool known_scalar =
            std::find(kKnownSections.begin(), kKnownSections.end(), s.name) !=
            kKnownSections.end();
        if (!known_scalar && s.name.rfind("user ", 0) != 0) {
            fail_at(raw, s.line, "unknown section [" + s.name + "]");
        }
        for (const auto& [key, entry] : s.entries) {
            if (!entry.used) {
                fail_at(raw, entry.line,
                        "unknown key '" + key + "' in section [" + s.name + "]");
            }
        }
    }

    try {
        cfg.validate();
    } catch (const std::exception& e) {
        throw ConfigError(source_name + ": " + e.what());
    }
    return cfg;
}

NetworkConfig read_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str(), path.string(), overrides);
}

std::string config_echo(const NetworkConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "[source]\n";
    os << "pair_rate = " << cfg.star.source.pair_rate << "\n";
    os << "duration = " << cfg.star.source.duration_s << "\n";
    os << "pair_width_ps = " << cfg.star.source.pair_width_ps << "\n";
    os << "\n[splitter]\nports = " << cfg.star.splitter_ports << "\n";
    os << "\n[histogram]\n";
    os << "tau_window_ps = " << cfg.histogram.tau_window_ps << "\n";
    os << "bin_width_ps = " << cfg.histogram.bin_width_ps << "\n";
    os << "segment_duration = " << cfg.histogram.segment_duration_s << "\n";
    os << "peak_significance = " << cfg.histogram.peak_significance << "\n";
    os << "\n[filter]\n";
    os << "sigma_x = " << cfg.filter.sigma_x << "\n";
    os << "sigma_y = " << cfg.filter.sigma_y << "\n";
    os << "window = " << cfg.filter.window_s << "\n";
    os << "stride = " << cfg.filter.stride_s << "\n";
    os << "downweight_factor = " << cfg.filter.downweight_factor << "\n";
    os << "init_sigma_x_ps = " << cfg.filter.init_sigma_x_ps << "\n";
    os << "init_sigma_y_ps_per_s = " << cfg.filter.init_sigma_y_ps_per_s << "\n";
    os << "mode = " << (cfg.rolling ? "rolling" : "full") << "\n";
    os << "\n[closure]\n";
    os << "threshold_sigma = " << cfg.closure.threshold_sigma << "\n";
    os << "max_candidates = " << cfg.closure.max_candidates << "\n";
    for (const UserSetup& u : cfg.star.users) {
        os << "\n[user " << u.label << "]\n";
        os << "delay_ps = " << u.channel.fixed_delay_ps << "\n";
        os << "dispersion_ps = " << u.channel.dispersion_sigma_ps << "\n";
        os << "loss = " << u.channel.loss << "\n";
        os << "efficiency = " << u.detector.efficiency << "\n";
        os << "jitter_fwhm_ps = " << u.detector.jitter_fwhm_ps << "\n";
        os << "dead_time_ps = " << u.detector.dead_time_ps << "\n";
        os << "dark_rate = " << u.detector.dark_rate << "\n";
        os << "resolution_ps = " << u.detector.resolution_ps << "\n";
        os << "clock_offset_ps = " << u.clock.initial_offset_ps << "\n";
        os << "clock_skew = " << u.clock.skew << "\n";
        os << "clock_sigma_x = " << u.clock.random_walk_offset_density << "\n";
        os << "clock_sigma_y = " << u.clock.random_walk_freq_density << "\n";
        os << "clock_seed = " << u.clock.seed << "\n";
        os << "clock_group = " << u.clock_group << "\n";
    }
    return os.str();
}

}  // namespace qsync
