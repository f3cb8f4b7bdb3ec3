#include "dlm/visualizer.hpp"

#include <sstream>

#include "dlm/error.hpp"
#include "dlm/vocab.hpp"

namespace dlm {

namespace {

constexpr const char * kMaskGlyph = "░";  // light shade block
constexpr const char * kDotGlyph  = "·";

int utf8_sequence_len(uint8_t lead) {
    if (lead < 0x80) {
        return 1;
    }
    if ((lead & 0xe0) == 0xc0) {
        return 2;
    }
    if ((lead & 0xf0) == 0xe0) {
        return 3;
    }
    if ((lead & 0xf8) == 0xf0) {
        return 4;
    }
    return 0;  // continuation or invalid lead
}

// glyphs for the current window content; cells[i] empty means masked
std::vector<std::string> cell_glyphs(const std::vector<int32_t> & window) {
    const int                n = static_cast<int>(window.size());
    std::vector<std::string> g(n);

    for (int i = 0; i < n; i++) {
        int32_t id = window[i];
        if (id == VocabSpec::mask_id) {
            g[i] = kMaskGlyph;
        } else if (id == VocabSpec::eos_id) {
            g[i] = "§";
        } else if (id == VocabSpec::bos_id) {
            g[i] = "»";
        } else if (id == VocabSpec::pad_id) {
            g[i] = "_";
        }
    }

    for (int i = 0; i < n; i++) {
        if (!g[i].empty()) {
            continue;  // special already handled
        }
        uint8_t b = VocabSpec::id_to_byte(window[i]);
        int     len = utf8_sequence_len(b);
        if (len == 1) {
            if (b == '\n') {
                g[i] = "¶";
            } else if (b >= 0x20 && b < 0x7f) {
                g[i] = std::string(1, static_cast<char>(b));
            } else {
                g[i] = kDotGlyph;
            }
            continue;
        }
        if (len >= 2) {
            // lead byte: the full character renders here when every
            // continuation byte is already finalized
            bool complete = i + len <= n;
            for (int k = 1; complete && k < len; k++) {
                int32_t cid = window[i + k];
                complete = VocabSpec::is_byte(cid) && (VocabSpec::id_to_byte(cid) & 0xc0) == 0x80;
            }
            if (complete) {
                std::string ch;
                for (int k = 0; k < len; k++) {
                    ch.push_back(static_cast<char>(VocabSpec::id_to_byte(window[i + k])));
                }
                g[i] = ch;
                for (int k = 1; k < len; k++) {
                    g[i + k] = kDotGlyph;
                }
                i += len - 1;
                continue;
            }
        }
        g[i] = kDotGlyph;  // continuation without a lead, or partial sequence
    }
    return g;
}

enum class CellStyle { plain, emphasis, early, mid, late };

std::string styled(const std::string & glyph, CellStyle style, bool color) {
    if (!color || style == CellStyle::plain) {
        return glyph;
    }
    const char * code = "";
    switch (style) {
        case CellStyle::emphasis: code = "\033[7m"; break;
        case CellStyle::early:    code = "\033[32m"; break;
        case CellStyle::mid:      code = "\033[33m"; break;
        case CellStyle::late:     code = "\033[31m"; break;
        default:                  break;
    }
    return std::string(code) + glyph + "\033[0m";
}

std::string compose_frame(const std::vector<std::string> & glyphs, const std::vector<CellStyle> & styles, int width,
                          bool color) {
    std::ostringstream out;
    for (size_t i = 0; i < glyphs.size(); i++) {
        out << styled(glyphs[i], styles[i], color);
        if ((i + 1) % static_cast<size_t>(width) == 0 && i + 1 != glyphs.size()) {
            out << "\n";
        }
    }
    return out.str();
}

}  // namespace

std::vector<std::string> render_history(const DecodeHistory & history, const RenderOptions & opts) {
    check(opts.width > 0, ErrorKind::config, "render: width must be positive");
    validate_history(history);

    const int W = history.window;
    if (W == 0) {
        return {};
    }

    std::vector<std::string> frames;

    if (opts.mode == RenderMode::replay) {
        std::vector<int32_t> window(W, VocabSpec::mask_id);
        for (const auto & st : history.steps) {
            std::vector<CellStyle> styles(W, CellStyle::plain);
            for (size_t i = 0; i < st.positions.size(); i++) {
                window[st.positions[i]] = st.tokens[i];
                styles[st.positions[i]] = CellStyle::emphasis;
            }
            frames.push_back(compose_frame(cell_glyphs(window), styles, opts.width, opts.color));
        }
        return frames;
    }

    // summary: color encodes the finalization tercile of each position
    std::vector<int32_t> window(W, VocabSpec::mask_id);
    std::vector<int>     step_of(W, 0);
    for (size_t s = 0; s < history.steps.size(); s++) {
        for (size_t i = 0; i < history.steps[s].positions.size(); i++) {
            window[history.steps[s].positions[i]] = history.steps[s].tokens[i];
            step_of[history.steps[s].positions[i]] = static_cast<int>(s);
        }
    }
    const int              total = static_cast<int>(history.steps.size());
    std::vector<CellStyle> styles(W, CellStyle::plain);
    for (int i = 0; i < W; i++) {
        int tercile = total <= 1 ? 0 : (step_of[i] * 3) / total;
        styles[i]   = tercile == 0 ? CellStyle::early : (tercile == 1 ? CellStyle::mid : CellStyle::late);
    }
    frames.push_back(compose_frame(cell_glyphs(window), styles, opts.width, opts.color));
    return frames;
}

}  // namespace dlm
