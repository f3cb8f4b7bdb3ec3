#include "dlm/vocab.hpp"

namespace dlm {

std::vector<int32_t> encode(std::string_view text) {
    std::vector<int32_t> out;
    out.reserve(text.size());
    for (char c : text) {
        out.push_back(VocabSpec::byte_to_id(static_cast<uint8_t>(c)));
    }
    return out;
}

std::string decode(std::span<const int32_t> tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (int32_t id : tokens) {
        if (VocabSpec::is_byte(id)) {
            out.push_back(static_cast<char>(VocabSpec::id_to_byte(id)));
        }
    }
    return out;
}

std::string decode_trim_eos(std::span<const int32_t> tokens) {
    size_t end = tokens.size();
    while (end > 0 && tokens[end - 1] == VocabSpec::eos_id) {
        end--;
    }
    return decode(tokens.subspan(0, end));
}

}  // namespace dlm
