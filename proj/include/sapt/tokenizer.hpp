// Character-level tokenizer over printable ASCII plus four reserved tokens.
// Reserved tokens appear in text dumps as the literal strings "[PAD]",
// "[EOS]", "[GEN]" and "[SEP]" and round-trip through tokenize/detokenize.
#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sapt/errors.hpp"

namespace sapt {

class Vocab {
  public:
    static constexpr int pad_id = 0;
    static constexpr int eos_id = 1;
    static constexpr int gen_id = 2;
    static constexpr int sep_id = 3;
    static constexpr int first_char_id = 4;
    static constexpr char first_char = ' ';   // 0x20
    static constexpr char last_char = '~';    // 0x7e

    static constexpr int size() { return first_char_id + (last_char - first_char + 1); }  // 99

    static const std::array<std::string_view, 4>& reserved_literals() {
        static const std::array<std::string_view, 4> lits{"[PAD]", "[EOS]", "[GEN]", "[SEP]"};
        return lits;
    }

    std::vector<int> tokenize(std::string_view text) const {
        std::vector<int> ids;
        ids.reserve(text.size());
        std::size_t i = 0;
        while (i < text.size()) {
            bool matched = false;
            const auto& lits = reserved_literals();
            for (int r = 0; r < 4; ++r) {
                if (text.compare(i, lits[r].size(), lits[r]) == 0) {
                    ids.push_back(r);
                    i += lits[r].size();
                    matched = true;
                    break;
                }
            }
            if (matched) continue;
            const char c = text[i];
            if (c < first_char || c > last_char) {
                throw InputError("tokenize: character code " + std::to_string(static_cast<int>(static_cast<unsigned char>(c))) +
                                 " at position " + std::to_string(i) + " is outside the vocabulary");
            }
            ids.push_back(first_char_id + (c - first_char));
            ++i;
        }
        return ids;
    }

    std::string detokenize(std::span<const int> ids) const {
        std::string out;
        out.reserve(ids.size());
        for (int id : ids) {
            if (id < 0 || id >= size()) throw InputError("detokenize: id " + std::to_string(id) + " outside vocabulary");
            if (id < first_char_id) {
                out += reserved_literals()[static_cast<std::size_t>(id)];
            } else {
                out += static_cast<char>(first_char + (id - first_char_id));
            }
        }
        return out;
    }
};

}  // namespace sapt
