#pragma once

// Corpus JSONL format, binary feature files and the ontology derived from a
// corpus.
//
// Corpus: one dialogue per line,
//   {"dialogue_id": str, "turns": [turn, ...]}
//   turn = {"turn_id": int (dense from 0),
//           "user": {"symbols": [int]} | {"features": [[float]]}
//                   | {"feature_ref": {"file": str, "key": str}},
//           "transcript": str, "agent": str,
//           "state": {"domains": [str], "slots": {str: str}},
//           "asr_hyp": str (optional)}
//
// Feature file (little-endian):
//   "SDSTFEAT" | u32 version=1 | u32 count |
//   count x (u32 key_len | key bytes | u32 rows | u32 cols | rows*cols f32 row-major)

#include "sdst/encoder.hpp"
#include "sdst/postprocess.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>

namespace sdst {

struct FeatureRef {
    std::string file;
    std::string key;
};

struct UserAudio {
    std::vector<int> symbols;
    std::optional<FeatureSequence> features;
    std::optional<FeatureRef> ref;
};

struct DialogueTurn {
    int turn_id = 0;
    UserAudio user;
    std::string transcript;
    std::string agent;
    DialogueState state;
    std::optional<std::string> asr_hyp;
};

struct Dialogue {
    std::string id;
    std::vector<DialogueTurn> turns;
};

struct DialogueCorpus {
    std::vector<Dialogue> dialogues;
    std::string base_dir;  // feature_ref paths are relative to this
    std::vector<std::string> warnings;

    std::size_t turn_count() const {
        std::size_t n = 0;
        for (const auto& d : dialogues) n += d.turns.size();
        return n;
    }
};

class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Feature files

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("unexpected end of binary file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

inline void put_matrix(std::ostream& out, const Matrix& m) {
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) put_f32(out, m.data()[i]);
}

inline Matrix get_matrix(std::istream& in) {
    std::uint32_t rows = get_u32(in), cols = get_u32(in);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get_f32(in);
    return m;
}

inline void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
    std::uint32_t n = get_u32(in);
    std::string s(n, '\0');
    if (n > 0 && !in.read(s.data(), n)) throw std::runtime_error("unexpected end of binary file");
    return s;
}

}  // namespace detail

inline constexpr char kFeatureMagic[8] = {'S', 'D', 'S', 'T', 'F', 'E', 'A', 'T'};

inline void write_feature_file(const std::string& path, const std::vector<std::pair<std::string, Matrix>>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write feature file '" + path + "'");
    out.write(kFeatureMagic, 8);
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& [key, m] : records) {
        detail::put_string(out, key);
        detail::put_matrix(out, m);
    }
}

inline std::vector<std::pair<std::string, Matrix>> read_feature_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read feature file '" + path + "'");
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kFeatureMagic, 8) != 0)
        throw std::runtime_error("'" + path + "' is not a feature file");
    if (std::uint32_t version = detail::get_u32(in); version != 1)
        throw std::runtime_error("'" + path + "': unsupported feature file version " + std::to_string(version));
    std::uint32_t n = detail::get_u32(in);
    std::vector<std::pair<std::string, Matrix>> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string key = detail::get_string(in);
        out.emplace_back(std::move(key), detail::get_matrix(in));
    }
    return out;
}

/// Lazily loads referenced feature files; safe for concurrent readers.
class FeatureStore {
public:
    explicit FeatureStore(std::string base_dir = {}) : base_(std::move(base_dir)) {}

    Matrix get(const FeatureRef& ref) {
        std::lock_guard lock(mu_);
        auto path = (std::filesystem::path(base_) / ref.file).string();
        auto it = files_.find(path);
        if (it == files_.end()) {
            std::map<std::string, Matrix> recs;
            for (auto& [k, m] : read_feature_file(path)) recs.emplace(k, std::move(m));
            it = files_.emplace(path, std::move(recs)).first;
        }
        auto rec = it->second.find(ref.key);
        if (rec == it->second.end()) throw std::runtime_error("feature key '" + ref.key + "' not found in " + path);
        return rec->second;
    }

private:
    std::string base_;
    std::mutex mu_;
    std::map<std::string, std::map<std::string, Matrix>> files_;
};

/// Encoder input for a turn, resolving file references through `store`.
inline Utterance resolve_utterance(const DialogueTurn& turn, FeatureStore& store) {
    Utterance u;
    if (!turn.user.symbols.empty()) u.symbols = turn.user.symbols;
    else if (turn.user.features) u.features = turn.user.features;
    else if (turn.user.ref) u.features = store.get(*turn.user.ref);
    return u;
}

// ---------------------------------------------------------------------------
// Corpus JSONL

namespace detail {

inline const nlohmann::ordered_json& require(const nlohmann::ordered_json& j, const std::string& key,
                                             const std::string& path) {
    if (!j.is_object() || !j.contains(key)) throw CorpusError(path + (path.empty() ? "" : ".") + key + ": missing required field");
    return j.at(key);
}

inline std::string require_string(const nlohmann::ordered_json& j, const std::string& key, const std::string& path) {
    const auto& v = require(j, key, path);
    if (!v.is_string()) throw CorpusError(path + "." + key + ": expected a string");
    return v.get<std::string>();
}

inline DialogueState parse_state(const nlohmann::ordered_json& j, const std::string& path) {
    if (!j.is_object()) throw CorpusError(path + ": expected an object");
    DialogueState s;
    const auto& doms = require(j, "domains", path);
    if (!doms.is_array()) throw CorpusError(path + ".domains: expected an array");
    for (const auto& d : doms) {
        if (!d.is_string()) throw CorpusError(path + ".domains: expected strings");
        s.domains.push_back(d.get<std::string>());
    }
    const auto& slots = require(j, "slots", path);
    if (!slots.is_object()) throw CorpusError(path + ".slots: expected an object");
    for (const auto& [k, v] : slots.items()) {
        if (!v.is_string()) throw CorpusError(path + ".slots." + k + ": expected a string");
        s.slots.emplace_back(k, v.get<std::string>());
    }
    if (auto why = state_violation(s); !why.empty()) throw CorpusError(path + ": " + why);
    return s;
}

inline UserAudio parse_user(const nlohmann::ordered_json& j, const std::string& path) {
    if (!j.is_object()) throw CorpusError(path + ": expected an object");
    UserAudio u;
    int kinds = 0;
    if (j.contains("symbols")) {
        ++kinds;
        if (!j.at("symbols").is_array()) throw CorpusError(path + ".symbols: expected an array");
        for (const auto& s : j.at("symbols")) {
            if (!s.is_number_integer()) throw CorpusError(path + ".symbols: expected integers");
            u.symbols.push_back(s.get<int>());
        }
        if (u.symbols.empty()) throw CorpusError(path + ".symbols: empty utterance");
    }
    if (j.contains("features")) {
        ++kinds;
        const auto& rows = j.at("features");
        if (!rows.is_array() || rows.empty()) throw CorpusError(path + ".features: expected a non-empty matrix");
        std::size_t cols = rows.at(0).size();
        Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (!rows[r].is_array() || rows[r].size() != cols)
                throw CorpusError(path + ".features[" + std::to_string(r) + "]: ragged row");
            for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<float>();
        }
        u.features = std::move(m);
    }
    if (j.contains("feature_ref")) {
        ++kinds;
        const auto& r = j.at("feature_ref");
        u.ref = FeatureRef{require_string(r, "file", path + ".feature_ref"), require_string(r, "key", path + ".feature_ref")};
    }
    if (kinds != 1) throw CorpusError(path + ": exactly one of symbols, features, feature_ref is required");
    return u;
}

}  // namespace detail

inline Dialogue dialogue_from_json(const nlohmann::ordered_json& j) {
    if (!j.is_object()) throw CorpusError("expected a dialogue object");
    Dialogue d;
    d.id = detail::require_string(j, "dialogue_id", "");
    const auto& turns = detail::require(j, "turns", "");
    if (!turns.is_array()) throw CorpusError("turns: expected an array");
    for (std::size_t i = 0; i < turns.size(); ++i) {
        std::string path = "turns[" + std::to_string(i) + "]";
        const auto& tj = turns[i];
        DialogueTurn t;
        const auto& id = detail::require(tj, "turn_id", path);
        if (!id.is_number_integer() || id.get<int>() != static_cast<int>(i))
            throw CorpusError(path + ".turn_id: expected " + std::to_string(i));
        t.turn_id = static_cast<int>(i);
        t.user = detail::parse_user(detail::require(tj, "user", path), path + ".user");
        t.transcript = detail::require_string(tj, "transcript", path);
        t.agent = detail::require_string(tj, "agent", path);
        t.state = detail::parse_state(detail::require(tj, "state", path), path + ".state");
        if (tj.contains("asr_hyp")) {
            if (!tj.at("asr_hyp").is_string()) throw CorpusError(path + ".asr_hyp: expected a string");
            t.asr_hyp = tj.at("asr_hyp").get<std::string>();
        }
        d.turns.push_back(std::move(t));
    }
    return d;
}

inline nlohmann::ordered_json to_json(const Dialogue& d) {
    nlohmann::ordered_json j;
    j["dialogue_id"] = d.id;
    j["turns"] = nlohmann::ordered_json::array();
    for (const auto& t : d.turns) {
        nlohmann::ordered_json tj;
        tj["turn_id"] = t.turn_id;
        nlohmann::ordered_json user = nlohmann::ordered_json::object();
        if (!t.user.symbols.empty()) {
            user["symbols"] = t.user.symbols;
        } else if (t.user.features) {
            auto rows = nlohmann::ordered_json::array();
            for (Eigen::Index r = 0; r < t.user.features->rows(); ++r) {
                auto row = nlohmann::ordered_json::array();
                for (Eigen::Index c = 0; c < t.user.features->cols(); ++c) row.push_back((*t.user.features)(r, c));
                rows.push_back(std::move(row));
            }
            user["features"] = std::move(rows);
        } else if (t.user.ref) {
            user["feature_ref"] = {{"file", t.user.ref->file}, {"key", t.user.ref->key}};
        }
        tj["user"] = std::move(user);
        tj["transcript"] = t.transcript;
        tj["agent"] = t.agent;
        tj["state"] = {{"domains", t.state.domains}, {"slots", state_slots_json(t.state)}};
        if (t.asr_hyp) tj["asr_hyp"] = *t.asr_hyp;
        j["turns"].push_back(std::move(tj));
    }
    return j;
}

inline std::string corpus_to_string(const DialogueCorpus& c) {
    std::string out;
    for (const auto& d : c.dialogues) out += dump_line(to_json(d)) + "\n";
    return out;
}

inline DialogueCorpus parse_corpus(std::istream& in, std::string base_dir = {}) {
    DialogueCorpus c;
    c.base_dir = std::move(base_dir);
    std::string line;
    int lineno = 0;
    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            auto j = nlohmann::ordered_json::parse(line);
            Dialogue d = dialogue_from_json(j);
            if (!ids.insert(d.id).second) throw CorpusError("dialogue_id: duplicate id '" + d.id + "'");
            for (std::size_t t = 1; t < d.turns.size(); ++t)
                for (const auto& [k, v] : d.turns[t - 1].state.slots)
                    if (!d.turns[t].state.get(k))
                        c.warnings.push_back("line " + std::to_string(lineno) + ": turns[" + std::to_string(t) +
                                             "].state drops slot '" + k + "' (states should be cumulative)");
            c.dialogues.push_back(std::move(d));
        } catch (const CorpusError& e) {
            throw CorpusError("line " + std::to_string(lineno) + ": " + e.what());
        } catch (const nlohmann::json::exception& e) {
            throw CorpusError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (c.dialogues.empty()) c.warnings.push_back("corpus is empty");
    return c;
}

inline DialogueCorpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot read corpus '" + path + "'");
    try {
        return parse_corpus(in, std::filesystem::path(path).parent_path().string());
    } catch (const CorpusError& e) {
        throw CorpusError(path + ":" + e.what());
    }
}

inline void save_corpus(const std::string& path, const DialogueCorpus& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CorpusError("cannot write corpus '" + path + "'");
    out << corpus_to_string(c);
}

/// Slot name -> gold values, deduplicated case-insensitively and sorted.
inline Ontology derive_ontology(const DialogueCorpus& corpus) {
    std::map<std::string, std::map<std::string, std::string>> seen;  // slot -> folded -> first spelling
    for (const auto& d : corpus.dialogues)
        for (const auto& t : d.turns)
            for (const auto& [k, v] : t.state.slots) {
                std::string folded = v;
                for (auto& ch : folded) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
                seen[k].emplace(folded, v);
            }
    Ontology o;
    for (const auto& [slot, vals] : seen) {
        std::vector<std::string> values;
        for (const auto& [folded, original] : vals) values.push_back(original);
        o.add(slot, std::move(values));
    }
    return o;
}

}  // namespace sdst
