#pragma once

#include <string>
#include <vector>

#include "dlm/vocab.hpp"

namespace dlm {

enum class Role { user, assistant };

struct Message {
    Role        role;
    std::string content;
};

inline constexpr const char * user_marker      = "<|user|>\n";
inline constexpr const char * assistant_marker = "<|assistant|>\n";

// Expands a conversation to token ids:
//   [bos] then per message: marker bytes ++ content bytes ++ [eos].
// With add_generation_prompt, the assistant marker is appended with no
// content and no EOS. Roles must alternate starting with user.
std::vector<int32_t> apply_chat_template(const std::vector<Message> & messages, bool add_generation_prompt);

}  // namespace dlm
