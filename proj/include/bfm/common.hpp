#pragma once

#include <cmath>
#include <complex>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

namespace bfm {

using Complex = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Error with a short category tag, e.g. "parse", "topology", "solver".
class Error : public std::runtime_error {
public:
    Error(std::string tag, const std::string& what)
        : std::runtime_error(what), tag_(std::move(tag)) {}
    const std::string& tag() const { return tag_; }

private:
    std::string tag_;
};

/// Projection onto (-pi, pi]; exactly -pi maps to +pi.
inline double wrap_angle(double a) {
    return a - 2.0 * kPi * std::ceil((a - kPi) / (2.0 * kPi));
}

inline double rad2deg(double r) { return r * 180.0 / kPi; }
inline double deg2rad(double d) { return d * kPi / 180.0; }

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, ErrorLevel = 3, None = 4 };

// Log level comes from BFM_OPF_LOG ({debug,info,warn,error,none}); default warn.
inline LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* env = std::getenv("BFM_OPF_LOG");
        if (!env) return LogLevel::Warn;
        std::string s(env);
        if (s == "debug") return LogLevel::Debug;
        if (s == "info") return LogLevel::Info;
        if (s == "warn") return LogLevel::Warn;
        if (s == "error") return LogLevel::ErrorLevel;
        if (s == "none") return LogLevel::None;
        return LogLevel::Warn;
    }();
    return lvl;
}

inline void log(LogLevel lvl, const std::string& msg) {
    static const char* names[] = {"debug", "info", "warn", "error"};
    if (lvl >= log_level() && lvl != LogLevel::None)
        std::cerr << "[bfm:" << names[static_cast<int>(lvl)] << "] " << msg << "\n";
}

}  // namespace bfm
