#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace alm::utf8 {

// Strict decoder: rejects overlong forms, surrogates, and values past U+10FFFF.
// Throws DecodeError carrying the byte offset of the first bad sequence.
std::u32string decode(std::string_view bytes);

// Returns the offset of the first invalid byte, or npos when the input is valid.
std::size_t find_invalid(std::string_view bytes) noexcept;

std::string encode(std::u32string_view text);
void append(std::string& out, char32_t cp);

}  // namespace alm::utf8
