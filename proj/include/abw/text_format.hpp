#pragma once

#include <cstdio>
#include <string>

namespace abw {

// Shortest decimal representation that parses back to the same double.
// Data files use this; display rounding happens only in rendered tables.
inline std::string format_double(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::stod(buf) == v) {
            return buf;
        }
    }
    return buf;
}

} // namespace abw
