#pragma once

#include <string>
#include <string_view>

namespace lco {

std::string sha1_hex(std::string_view bytes);

/// Git-style blob id: sha1("blob <len>\0" + bytes).
std::string content_hash(std::string_view bytes);

}  // namespace lco
