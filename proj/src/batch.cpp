#include "xlmt/batch.hpp"

#include <algorithm>

namespace xlmt {

std::vector<int32_t> tokenize(const std::string& text, int max_len) {
    if (max_len < 2) throw ConfigError("tokenize: max_len must allow BOS and EOS");
    std::vector<int32_t> ids;
    ids.reserve(std::min<size_t>(text.size() + 2, static_cast<size_t>(max_len)));
    ids.push_back(kBosToken);
    const size_t body = std::min(text.size(), static_cast<size_t>(max_len - 2));
    for (size_t i = 0; i < body; ++i) ids.push_back(static_cast<int32_t>(static_cast<uint8_t>(text[i])));
    ids.push_back(kEosToken);
    return ids;
}

Batch make_batch(const std::vector<std::string>& texts, int max_seq_len) {
    if (texts.empty()) throw ValidationError("make_batch: empty text list");
    std::vector<std::vector<int32_t>> rows;
    rows.reserve(texts.size());
    size_t longest = 0;
    for (const std::string& t : texts) {
        rows.push_back(tokenize(t, max_seq_len));
        longest = std::max(longest, rows.back().size());
    }
    Batch b;
    b.batch_size = static_cast<int64_t>(texts.size());
    b.seq_len = static_cast<int64_t>(longest);
    b.token_ids.assign(static_cast<size_t>(b.batch_size * b.seq_len), kPadToken);
    b.attn_mask.assign(static_cast<size_t>(b.batch_size * b.seq_len), 0);
    for (size_t i = 0; i < rows.size(); ++i) {
        for (size_t s = 0; s < rows[i].size(); ++s) {
            b.token_ids[i * static_cast<size_t>(b.seq_len) + s] = rows[i][s];
            b.attn_mask[i * static_cast<size_t>(b.seq_len) + s] = 1;
        }
    }
    return b;
}

}  // namespace xlmt
