#pragma once

#include <json.hpp>

#include <cstdio>
#include <string>
#include <string_view>

namespace ckdrift::detail {

/// Shortest form is not used on purpose: reports pin 17 significant digits.
inline std::string format_real17(double value) {
    char buffer[40];
    std::snprintf(buffer, sizeof buffer, "%.17g", value == 0.0 ? 0.0 : value);
    return buffer;
}

inline std::string format_fixed(double value, int decimals) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.*f", decimals, value == 0.0 ? 0.0 : value);
    return buffer;
}

inline std::string json_quote(std::string_view text) {
    return nlohmann::json(std::string(text)).dump();
}

}  // namespace ckdrift::detail
