#pragma once

#include <string>
#include <vector>

#include "xlmt/multitask.hpp"

namespace xlmt {

// Byte-level vocabulary: 256 raw bytes plus PAD/BOS/EOS.
constexpr int32_t kPadToken = 256;
constexpr int32_t kBosToken = 257;
constexpr int32_t kEosToken = 258;
constexpr int kByteVocabSize = 259;

struct Batch {
    int64_t batch_size = 0;
    int64_t seq_len = 0;
    std::vector<int32_t> token_ids;      // B*S row-major
    std::vector<uint8_t> attn_mask;      // B*S, 1 = real token
    std::vector<std::string> languages;  // one tag per row, may be empty
    TaskLabels labels;                   // may be empty (bench batches)

    int32_t token(int64_t b, int64_t s) const { return token_ids[static_cast<size_t>(b * seq_len + s)]; }
    bool masked_in(int64_t b, int64_t s) const { return attn_mask[static_cast<size_t>(b * seq_len + s)] != 0; }
};

// BOS + UTF-8 bytes + EOS, truncated to max_len (over-length text is cut, not rejected).
std::vector<int32_t> tokenize(const std::string& text, int max_len);

// Pads every row to the longest tokenized length in the group (capped at max_seq_len).
Batch make_batch(const std::vector<std::string>& texts, int max_seq_len);

}  // namespace xlmt
