#include "dlm/chat.hpp"

#include "dlm/error.hpp"

namespace dlm {

static void append_encoded(std::vector<int32_t> & out, std::string_view text) {
    for (char c : text) {
        out.push_back(VocabSpec::byte_to_id(static_cast<uint8_t>(c)));
    }
}

std::vector<int32_t> apply_chat_template(const std::vector<Message> & messages, bool add_generation_prompt) {
    for (size_t i = 0; i < messages.size(); i++) {
        Role expect = (i % 2 == 0) ? Role::user : Role::assistant;
        if (messages[i].role != expect) {
            fail(ErrorKind::data, "chat template: roles must alternate starting with user (message " +
                                      std::to_string(i) + " has the wrong role)");
        }
    }

    std::vector<int32_t> out;
    out.push_back(VocabSpec::bos_id);
    for (const Message & m : messages) {
        append_encoded(out, m.role == Role::user ? user_marker : assistant_marker);
        append_encoded(out, m.content);
        out.push_back(VocabSpec::eos_id);
    }
    if (add_generation_prompt) {
        append_encoded(out, assistant_marker);
    }
    return out;
}

}  // namespace dlm
