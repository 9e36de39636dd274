#include "io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "errors.hpp"

namespace mfb {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void atomic_write_file(const std::filesystem::path& path, const std::string& content) {
    auto parent = path.parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write file: " + tmp.string());
        out.write(content.data(), std::streamsize(content.size()));
        if (!out) throw ConfigError("short write: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hash_hex(const std::string& s) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(s)));
    return buf;
}

std::string fmt_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw NumericError("fmt_double", "to_chars failed");
    return std::string(buf, p);
}

} // namespace mfb
