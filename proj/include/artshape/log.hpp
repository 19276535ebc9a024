#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>

namespace artshape::log {

enum class Level { Quiet = 0, Info = 1, Debug = 2 };

// Verbosity comes from HILASSIE_LOG: "0"/"quiet", "1"/"info" (default), "2"/"debug".
inline Level level()
{
    static const Level lvl = [] {
        const char* env = std::getenv("HILASSIE_LOG");
        if (env == nullptr) {
            return Level::Info;
        }
        const std::string v(env);
        if (v == "0" || v == "quiet") {
            return Level::Quiet;
        }
        if (v == "2" || v == "debug") {
            return Level::Debug;
        }
        return Level::Info;
    }();
    return lvl;
}

inline std::mutex& sink_mutex()
{
    static std::mutex m;
    return m;
}

inline void write(Level lvl, const std::string& msg)
{
    if (static_cast<int>(lvl) > static_cast<int>(level())) {
        return;
    }
    std::lock_guard lock(sink_mutex());
    std::cerr << (lvl == Level::Debug ? "[debug] " : "[info] ") << msg << '\n';
}

inline void info(const std::string& msg) { write(Level::Info, msg); }
inline void debug(const std::string& msg) { write(Level::Debug, msg); }
inline void warn(const std::string& msg)
{
    if (level() == Level::Quiet) {
        return;
    }
    std::lock_guard lock(sink_mutex());
    std::cerr << "[warn] " << msg << '\n';
}

} // namespace artshape::log
