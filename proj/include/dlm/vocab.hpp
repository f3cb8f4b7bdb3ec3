#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dlm {

// Byte-level vocabulary: four reserved specials followed by the 256 byte
// values. Token id of byte b is b + num_specials.
struct VocabSpec {
    static constexpr int32_t mask_id      = 0;
    static constexpr int32_t pad_id       = 1;
    static constexpr int32_t bos_id       = 2;
    static constexpr int32_t eos_id       = 3;
    static constexpr int32_t num_specials = 4;
    static constexpr int32_t vocab_size   = num_specials + 256;

    static bool is_special(int32_t id) { return id >= 0 && id < num_specials; }

    static bool is_byte(int32_t id) { return id >= num_specials && id < vocab_size; }

    static int32_t byte_to_id(uint8_t b) { return static_cast<int32_t>(b) + num_specials; }

    static uint8_t id_to_byte(int32_t id) { return static_cast<uint8_t>(id - num_specials); }
};

std::vector<int32_t> encode(std::string_view text);

// Inverse of encode on byte tokens; special tokens produce no output bytes.
std::string decode(std::span<const int32_t> tokens);

// decode() after dropping the maximal trailing EOS run.
std::string decode_trim_eos(std::span<const int32_t> tokens);

}  // namespace dlm
