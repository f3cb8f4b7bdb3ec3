#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dlm/chat.hpp"
#include "dlm/grid.hpp"
#include "dlm/vocab.hpp"

namespace dlm {

// A padded training batch. loss_mask marks loss-eligible positions; labels
// carry ignore_label everywhere else. attention_mask (true on non-pad
// positions) is optional: absent means full visibility.
struct Batch {
    static constexpr int32_t ignore_label = -1;

    TokenGrid                input_ids;
    BoolGrid                 loss_mask;
    TokenGrid                labels;
    std::optional<BoolGrid>  attention_mask;
    std::vector<int32_t>     prompt_lens;

    int rows() const { return input_ids.rows; }
    int cols() const { return input_ids.cols; }
};

struct SftExample {
    std::vector<int32_t> prompt;
    std::vector<int32_t> response;
};

// Right-pads rows to the longest row (<= max_len); loss on response
// positions only. Prompts truncate from the left, responses from the right,
// so the generation boundary survives. A prompt that alone fills max_len is
// rejected.
Batch collate_sft(const std::vector<SftExample> & examples, int max_len);

// Rows are whole documents truncated to max_len; loss on every non-pad
// position.
Batch collate_pretrain(const std::vector<std::vector<int32_t>> & docs, int max_len);

// Fig-style collator wrappers.
Batch wrap_no_attention_mask(Batch batch);
Batch eos_label_fill(Batch batch);
Batch wrap_prepend_bos(Batch batch, int max_len);

// Dataset ingestion.
std::vector<std::vector<Message>> read_sft_jsonl(const std::string & path);
std::vector<std::string>          read_text_documents(const std::string & path);

// prompt = template of everything before the final assistant turn (with the
// generation prompt appended), response = final assistant content ++ [eos].
SftExample conversation_to_example(const std::vector<Message> & messages);

}  // namespace dlm
