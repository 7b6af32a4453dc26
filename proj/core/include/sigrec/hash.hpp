#pragma once

#include <string>
#include <string_view>

namespace sigrec {

/// MD5 digest of `data` as 32 lowercase hex characters.
std::string md5_hex(std::string_view data);

}  // namespace sigrec
