#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "phenalign/error.hpp"

namespace phenalign {

enum class DxGroup { positive, control };
enum class Sex { male, female };
enum class SrsVersion { child, adult };

inline const char* display(DxGroup d) {
    return d == DxGroup::positive ? "asd" : "control";
}
inline const char* display(Sex s) { return s == Sex::male ? "male" : "female"; }
inline const char* display(SrsVersion s) {
    return s == SrsVersion::child ? "child" : "adult";
}

inline DxGroup parse_dx(const std::string& s) {
    if (s == "asd") return DxGroup::positive;
    if (s == "control") return DxGroup::control;
    throw ParseError("unknown diagnostic group: '" + s + "'");
}
inline Sex parse_sex(const std::string& s) {
    if (s == "male") return Sex::male;
    if (s == "female") return Sex::female;
    throw ParseError("unknown sex: '" + s + "'");
}
inline SrsVersion parse_srs(const std::string& s) {
    if (s == "child") return SrsVersion::child;
    if (s == "adult") return SrsVersion::adult;
    throw ParseError("unknown srs version: '" + s + "'");
}

// Rounding rule for rendered ages: nearest integer, half away from zero.
inline long rounded_age(double age) { return std::lround(age); }

constexpr std::array<const char*, 4> kAttributes = {"dx_group", "sex", "age", "srs"};

inline bool is_attribute(const std::string& name) {
    for (const char* a : kAttributes)
        if (name == a) return true;
    return false;
}

struct PhenotypeRecord {
    DxGroup dx = DxGroup::control;
    Sex sex = Sex::male;
    double age = 0.0;
    SrsVersion srs = SrsVersion::child;

    bool operator==(const PhenotypeRecord&) const = default;
};

// srs is not free: the instrument version follows the rendered age.
inline void validate_record(const PhenotypeRecord& rec) {
    if (!(rec.age >= 0.0))
        throw ContractError("record: age must be non-negative");
    SrsVersion expect =
        rounded_age(rec.age) < 18 ? SrsVersion::child : SrsVersion::adult;
    if (rec.srs != expect)
        throw ContractError("record: srs version inconsistent with age " +
                            std::to_string(rec.age));
}

inline PhenotypeRecord make_record(DxGroup dx, Sex sex, double age) {
    PhenotypeRecord rec;
    rec.dx = dx;
    rec.sex = sex;
    rec.age = age;
    rec.srs = rounded_age(age) < 18 ? SrsVersion::child : SrsVersion::adult;
    validate_record(rec);
    return rec;
}

// The value of one attribute as it appears in the rendered text. This is
// the notion of equality the pair labels use (age compares rounded).
inline std::string rendered_value(const PhenotypeRecord& rec, const std::string& attr) {
    if (attr == "dx_group") return display(rec.dx);
    if (attr == "sex") return display(rec.sex);
    if (attr == "age") return std::to_string(rounded_age(rec.age));
    if (attr == "srs") return display(rec.srs);
    throw LookupError("unknown attribute: '" + attr + "'");
}

inline std::string render_template(const PhenotypeRecord& rec) {
    return "diagnostic group: " + rendered_value(rec, "dx_group") +
           ", sex: " + rendered_value(rec, "sex") +
           ", age: " + rendered_value(rec, "age") +
           ", social responsiveness scale version: " + rendered_value(rec, "srs");
}

// Fixed sequence length: the 8 template tokens plus one trailing pad.
constexpr std::size_t kSeqLen = 9;

constexpr std::array<const char*, 4> kLiterals = {
    "diagnostic group:", "sex:", "age:", "social responsiveness scale version:"};

// Closed word-level vocabulary: pad, the four template literals (each one
// token, so every attribute value sits at a single position), categorical
// values, and integer ages 0..120.
class Vocabulary {
public:
    Vocabulary() {
        add("<pad>");
        for (const char* lit : kLiterals) add(lit);
        for (const char* v : {"asd", "control", "male", "female", "child", "adult"})
            add(v);
        for (int a = 0; a <= 120; ++a) add(std::to_string(a));
    }

    std::size_t size() const { return tokens_.size(); }
    std::size_t pad_id() const { return 0; }

    const std::string& token(std::size_t id) const {
        if (id >= tokens_.size())
            throw LookupError("vocabulary: id " + std::to_string(id) + " out of range");
        return tokens_[id];
    }

    std::size_t id(const std::string& tok) const {
        auto it = ids_.find(tok);
        if (it == ids_.end())
            throw ParseError("vocabulary: unknown token '" + tok + "'");
        return it->second;
    }

    bool contains(const std::string& tok) const { return ids_.count(tok) != 0; }

    // One token per line; a token's id is its 0-based line number.
    std::string to_text() const {
        std::string out;
        for (const std::string& t : tokens_) {
            out += t;
            out += '\n';
        }
        return out;
    }

private:
    void add(const std::string& t) {
        ids_.emplace(t, tokens_.size());
        tokens_.push_back(t);
    }

    std::vector<std::string> tokens_;
    std::map<std::string, std::size_t> ids_;
};

inline const Vocabulary& vocabulary() {
    static const Vocabulary v;
    return v;
}

struct TokenSequence {
    std::vector<std::size_t> token_ids;             // length kSeqLen
    std::map<std::string, std::size_t> attr_pos;    // attribute -> value index

    bool operator==(const TokenSequence&) const = default;
};

// Greedy longest-match scan against the closed vocabulary. Commas and
// spaces separate tokens and are not tokens themselves; multi-word
// literals match as a unit before their constituent words can.
inline TokenSequence tokenize(const std::string& text) {
    const Vocabulary& vocab = vocabulary();
    TokenSequence seq;
    std::size_t pos = 0;
    while (pos < text.size()) {
        if (text[pos] == ' ' || text[pos] == ',') {
            ++pos;
            continue;
        }
        std::size_t best_len = 0;
        std::size_t best_id = 0;
        for (std::size_t id = 0; id < vocab.size(); ++id) {
            const std::string& tok = vocab.token(id);
            if (tok.size() <= best_len) continue;
            if (text.compare(pos, tok.size(), tok) != 0) continue;
            const std::size_t end = pos + tok.size();
            if (end < text.size() && text[end] != ' ' && text[end] != ',') continue;
            best_len = tok.size();
            best_id = id;
        }
        if (best_len == 0) {
            std::size_t stop = text.find_first_of(" ,", pos);
            throw ParseError("tokenize: out-of-vocabulary word '" +
                             text.substr(pos, stop == std::string::npos
                                                  ? std::string::npos
                                                  : stop - pos) +
                             "'");
        }
        seq.token_ids.push_back(best_id);
        pos += best_len;
    }
    if (seq.token_ids.size() > kSeqLen)
        throw ParseError("tokenize: sequence longer than " + std::to_string(kSeqLen));
    // The template interleaves literal/value four times; values therefore
    // sit at fixed odd positions, which is what attr_pos records.
    if (seq.token_ids.size() == 2 * kAttributes.size()) {
        for (std::size_t a = 0; a < kAttributes.size(); ++a) {
            if (vocab.token(seq.token_ids[2 * a]) != kLiterals[a])
                throw ParseError(std::string("tokenize: expected literal '") +
                                 kLiterals[a] + "' at position " +
                                 std::to_string(2 * a));
            seq.attr_pos[kAttributes[a]] = 2 * a + 1;
        }
    }
    while (seq.token_ids.size() < kSeqLen) seq.token_ids.push_back(vocab.pad_id());
    return seq;
}

// Inverse of tokenize on template-shaped sequences: literals (which end
// with ':') start a new comma-separated segment, values follow a space.
inline std::string detokenize(const TokenSequence& seq) {
    const Vocabulary& vocab = vocabulary();
    std::string out;
    for (std::size_t id : seq.token_ids) {
        if (id == vocab.pad_id()) continue;
        const std::string& tok = vocab.token(id);
        if (!out.empty()) out += tok.back() == ':' ? ", " : " ";
        out += tok;
    }
    return out;
}

inline std::size_t attribute_index(const TokenSequence& seq, const std::string& attr) {
    auto it = seq.attr_pos.find(attr);
    if (it == seq.attr_pos.end())
        throw LookupError("unknown attribute: '" + attr + "'");
    return it->second;
}

inline TokenSequence tokenize_record(const PhenotypeRecord& rec) {
    return tokenize(render_template(rec));
}

}  // namespace phenalign
