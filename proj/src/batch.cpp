#include "dlm/batch.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "dlm/error.hpp"

namespace dlm {

Batch collate_sft(const std::vector<SftExample> & examples, int max_len) {
    check(max_len > 0, ErrorKind::config, "collate_sft: max_len must be positive");

    std::vector<std::vector<int32_t>> prompts, responses;
    for (size_t idx = 0; idx < examples.size(); idx++) {
        std::vector<int32_t> p = examples[idx].prompt;
        std::vector<int32_t> r = examples[idx].response;
        if (static_cast<int>(p.size()) >= max_len) {
            fail(ErrorKind::data, "collate_sft: prompt of row " + std::to_string(idx) +
                                      " fills max_len=" + std::to_string(max_len) + " on its own");
        }
        // prompt keeps its tail, response keeps its head
        int room = max_len - static_cast<int>(p.size());
        if (static_cast<int>(r.size()) > room) {
            r.resize(room);
        }
        prompts.push_back(std::move(p));
        responses.push_back(std::move(r));
    }

    int width = 0;
    for (size_t i = 0; i < prompts.size(); i++) {
        width = std::max(width, static_cast<int>(prompts[i].size() + responses[i].size()));
    }

    int   rows = static_cast<int>(prompts.size());
    Batch b;
    b.input_ids      = TokenGrid(rows, width, VocabSpec::pad_id);
    b.loss_mask      = BoolGrid(rows, width, 0);
    b.labels         = TokenGrid(rows, width, Batch::ignore_label);
    b.attention_mask = BoolGrid(rows, width, 0);
    b.prompt_lens.resize(rows);

    for (int r = 0; r < rows; r++) {
        const auto & p  = prompts[r];
        const auto & rs = responses[r];
        int          pl = static_cast<int>(p.size());
        b.prompt_lens[r] = pl;
        for (int i = 0; i < pl; i++) {
            b.input_ids.at(r, i)       = p[i];
            b.attention_mask->at(r, i) = 1;
        }
        for (int i = 0; i < static_cast<int>(rs.size()); i++) {
            b.input_ids.at(r, pl + i)       = rs[i];
            b.labels.at(r, pl + i)          = rs[i];
            b.loss_mask.at(r, pl + i)       = 1;
            b.attention_mask->at(r, pl + i) = 1;
        }
    }
    return b;
}

Batch collate_pretrain(const std::vector<std::vector<int32_t>> & docs, int max_len) {
    check(max_len > 0, ErrorKind::config, "collate_pretrain: max_len must be positive");

    int width = 0;
    for (const auto & d : docs) {
        width = std::max(width, std::min(max_len, static_cast<int>(d.size())));
    }

    int   rows = static_cast<int>(docs.size());
    Batch b;
    b.input_ids      = TokenGrid(rows, width, VocabSpec::pad_id);
    b.loss_mask      = BoolGrid(rows, width, 0);
    b.labels         = TokenGrid(rows, width, Batch::ignore_label);
    b.attention_mask = BoolGrid(rows, width, 0);
    b.prompt_lens.assign(rows, 0);

    for (int r = 0; r < rows; r++) {
        int n = std::min(max_len, static_cast<int>(docs[r].size()));
        for (int i = 0; i < n; i++) {
            b.input_ids.at(r, i)       = docs[r][i];
            b.labels.at(r, i)          = docs[r][i];
            b.loss_mask.at(r, i)       = 1;
            b.attention_mask->at(r, i) = 1;
        }
    }
    return b;
}

Batch wrap_no_attention_mask(Batch batch) {
    batch.attention_mask.reset();
    return batch;
}

Batch eos_label_fill(Batch batch) {
    for (int r = 0; r < batch.rows(); r++) {
        for (int c = 0; c < batch.cols(); c++) {
            if (batch.input_ids.at(r, c) == VocabSpec::pad_id) {
                batch.labels.at(r, c)    = VocabSpec::eos_id;
                batch.loss_mask.at(r, c) = 1;
            }
        }
    }
    return batch;
}

Batch wrap_prepend_bos(Batch batch, int max_len) {
    int width = batch.cols();
    if (width + 1 > max_len) {
        fail(ErrorKind::data, "wrap_prepend_bos: width " + std::to_string(width + 1) + " would exceed max_len " +
                                  std::to_string(max_len));
    }

    Batch out;
    out.input_ids = TokenGrid(batch.rows(), width + 1, VocabSpec::pad_id);
    out.loss_mask = BoolGrid(batch.rows(), width + 1, 0);
    out.labels    = TokenGrid(batch.rows(), width + 1, Batch::ignore_label);
    if (batch.attention_mask) {
        out.attention_mask = BoolGrid(batch.rows(), width + 1, 0);
    }
    out.prompt_lens.resize(batch.rows());

    for (int r = 0; r < batch.rows(); r++) {
        out.input_ids.at(r, 0) = VocabSpec::bos_id;
        if (out.attention_mask) {
            out.attention_mask->at(r, 0) = 1;
        }
        for (int c = 0; c < width; c++) {
            out.input_ids.at(r, c + 1) = batch.input_ids.at(r, c);
            out.loss_mask.at(r, c + 1) = batch.loss_mask.at(r, c);
            out.labels.at(r, c + 1)    = batch.labels.at(r, c);
            if (out.attention_mask) {
                out.attention_mask->at(r, c + 1) = batch.attention_mask->at(r, c);
            }
        }
        out.prompt_lens[r] = batch.prompt_lens[r] + 1;
    }
    return out;
}

std::vector<std::vector<Message>> read_sft_jsonl(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::io, "cannot open SFT dataset: " + path);
    }

    std::vector<std::vector<Message>> out;
    std::string                       line;
    size_t                            lineno = 0;
    while (std::getline(in, line)) {
        lineno++;
        if (line.empty()) {
            continue;
        }
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("messages") || !j["messages"].is_array()) {
            fail(ErrorKind::data, path + ":" + std::to_string(lineno) + ": expected {\"messages\": [...]}");
        }
        std::vector<Message> conv;
        for (const auto & m : j["messages"]) {
            std::string role = m.value("role", "");
            if (role != "user" && role != "assistant") {
                fail(ErrorKind::data, path + ":" + std::to_string(lineno) + ": unknown role \"" + role + "\"");
            }
            conv.push_back({role == "user" ? Role::user : Role::assistant, m.value("content", "")});
        }
        out.push_back(std::move(conv));
    }
    return out;
}

std::vector<std::string> read_text_documents(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::io, "cannot open text corpus: " + path);
    }

    std::vector<std::string> docs;
    std::string              line, cur;
    while (std::getline(in, line)) {
        if (line.empty()) {
            if (!cur.empty()) {
                docs.push_back(cur);
                cur.clear();
            }
        } else {
            if (!cur.empty()) {
                cur.push_back('\n');
            }
            cur += line;
        }
    }
    if (!cur.empty()) {
        docs.push_back(cur);
    }
    return docs;
}

SftExample conversation_to_example(const std::vector<Message> & messages) {
    if (messages.empty() || messages.back().role != Role::assistant) {
        fail(ErrorKind::data, "conversation must end with an assistant message");
    }
    std::vector<Message> head(messages.begin(), messages.end() - 1);

    SftExample ex;
    ex.prompt   = apply_chat_template(head, /*add_generation_prompt=*/true);
    ex.response = encode(messages.back().content);
    ex.response.push_back(VocabSpec::eos_id);
    return ex;
}

}  // namespace dlm
