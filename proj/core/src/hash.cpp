#include "sigrec/hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdint>

#include "sigrec/common.hpp"

namespace sigrec {

std::string md5_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_md5(),
                 nullptr) != 1) {
    throw Error("MD5 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(len * 2, '0');
  for (unsigned int i = 0; i < len; ++i) {
    out[2 * i] = hex[digest[i] >> 4];
    out[2 * i + 1] = hex[digest[i] & 0xf];
  }
  return out;
}

}  // namespace sigrec
