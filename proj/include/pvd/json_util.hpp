#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "pvd/common.hpp"

namespace pvd::detail {

/// Config error when `j` is not an object or holds a key outside `allowed`.
inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    require(j.is_object(), ErrorKind::Config, where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        require(ok, ErrorKind::Config, where + ": unknown key '" + it.key() + "'");
    }
}

template <class V>
void read_opt(const nlohmann::json& j, const char* key, V& out) {
    if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace pvd::detail
