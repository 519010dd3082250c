#pragma once

#include <fmt/format.h>
#include <json.hpp>

#include <initializer_list>
#include <string>

#include "gdistill/errors.hpp"

namespace gdistill::detail {

/// Rejects keys of `j` not in `allowed`, listing the valid ones.
inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& section) {
    if (!j.is_object()) throw ConfigError(fmt::format("'{}' must be a JSON object", section));
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) {
            std::string valid;
            for (const char* a : allowed) valid += (valid.empty() ? "" : ", ") + std::string(a);
            throw ConfigError(fmt::format("unknown key '{}.{}' (valid: {})", section, key, valid));
        }
    }
}

/// Reads `key` into `out` when present; type errors become ConfigError.
template <typename V> void read_optional(const nlohmann::json& j, const char* key, V& out, const std::string& section) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->template get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(fmt::format("'{}.{}' has the wrong type (got {})", section, key, it->dump()));
    }
}

} // namespace gdistill::detail
