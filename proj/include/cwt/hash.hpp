#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace cwt {

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);

}  // namespace cwt
