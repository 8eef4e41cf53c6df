#pragma once

#include <string>
#include <string_view>

namespace ckdrift {

/// Stems a lowercase ASCII word with the original Porter algorithm. Tokens
/// containing anything but a-z (punctuation, digits, clitics) are returned as-is.
std::string porter_stem(std::string_view word);

}  // namespace ckdrift
