#pragma once

#include <string>
#include <vector>

#include "dlm/sampler.hpp"

namespace dlm {

enum class RenderMode { replay, summary };

struct RenderOptions {
    RenderMode mode  = RenderMode::replay;
    int        width = 80;  // cells per line
    bool       color = true;
};

// Turns a decode history into text frames over the generated window.
//
// replay: one frame per step; masked cells render the placeholder glyph and
// cells finalized at that step carry inverse-video emphasis for one frame.
// summary: a single frame where each cell's color encodes its finalization
// tercile (early/mid/late).
//
// Cell glyphs: mask placeholder "░"; specials EOS "§", BOS "»", PAD "_";
// printable ASCII bytes render themselves, newline "¶"; bytes of a complete
// multi-byte UTF-8 character render the character at the lead cell with "·"
// continuations; undecodable partial bytes render "·".
//
// With color off the output contains no escape bytes.
std::vector<std::string> render_history(const DecodeHistory & history, const RenderOptions & opts);

}  // namespace dlm
