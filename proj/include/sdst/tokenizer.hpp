#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sdst {

/// Byte-level vocabulary: ids 0..255 are raw bytes, followed by three specials.
struct ByteTokenizer {
    static constexpr int kBos = 256;
    static constexpr int kEos = 257;
    static constexpr int kPad = 258;
    static constexpr int kVocabSize = 259;

    static std::vector<int> encode(std::string_view text) {
        std::vector<int> ids;
        ids.reserve(text.size());
        for (unsigned char c : text) ids.push_back(c);
        return ids;
    }

    /// Concatenates byte tokens; special tokens are dropped.
    static std::string decode(std::span<const int> ids) {
        std::string out;
        out.reserve(ids.size());
        for (int id : ids)
            if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
        return out;
    }

    static std::string name() { return "byte-level/259"; }
};

}  // namespace sdst
