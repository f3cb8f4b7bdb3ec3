#include "dlm/history_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dlm/error.hpp"

namespace dlm {

using nlohmann::json;

std::string history_to_records(const DecodeHistory & history) {
    std::ostringstream out;
    out << json{{"prompt", history.prompt}, {"window", history.window}}.dump() << "\n";
    for (size_t s = 0; s < history.steps.size(); s++) {
        const DecodeStep & st = history.steps[s];
        out << json{{"step", s},
                    {"positions", st.positions},
                    {"tokens", st.tokens},
                    {"confidences", st.confidences},
                    {"masked_remaining", st.masked_remaining}}
                   .dump()
            << "\n";
    }
    return out.str();
}

DecodeHistory history_from_records(std::istream & in, const std::string & origin) {
    DecodeHistory history;
    std::string   line;
    size_t        lineno = 0;
    bool          header = false;
    while (std::getline(in, line)) {
        lineno++;
        if (line.empty()) {
            continue;
        }
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            fail(ErrorKind::data, origin + ":" + std::to_string(lineno) + ": invalid history record");
        }
        if (!header) {
            if (!j.contains("window")) {
                fail(ErrorKind::data, origin + ": first record must be the {prompt, window} header");
            }
            history.prompt = j.value("prompt", std::vector<int32_t>{});
            history.window = j.at("window").get<int32_t>();
            header         = true;
            continue;
        }
        DecodeStep st;
        st.positions        = j.at("positions").get<std::vector<int32_t>>();
        st.tokens           = j.at("tokens").get<std::vector<int32_t>>();
        st.confidences      = j.at("confidences").get<std::vector<double>>();
        st.masked_remaining = j.at("masked_remaining").get<int32_t>();
        history.steps.push_back(std::move(st));
    }
    if (!header) {
        fail(ErrorKind::data, origin + ": empty history file");
    }
    return history;
}

void write_history(const DecodeHistory & history, const std::string & path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        fail(ErrorKind::io, "cannot open history file for writing: " + path);
    }
    out << history_to_records(history);
    if (!out) {
        fail(ErrorKind::io, "write failed for history file: " + path);
    }
}

DecodeHistory read_history(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::io, "cannot open history file: " + path);
    }
    return history_from_records(in, path);
}

}  // namespace dlm
