#pragma once

#include <iosfwd>
#include <string>

#include "dlm/sampler.hpp"

namespace dlm {

// Line-delimited history format: a header object
// {"prompt":[...],"window":N} followed by one object per step
// {"step":s,"positions":[...],"tokens":[...],"confidences":[...],
//  "masked_remaining":r}.
std::string   history_to_records(const DecodeHistory & history);
DecodeHistory history_from_records(std::istream & in, const std::string & origin = "<stream>");

void          write_history(const DecodeHistory & history, const std::string & path);
DecodeHistory read_history(const std::string & path);

}  // namespace dlm
