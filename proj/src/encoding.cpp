#include "a3sn/encoding.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "a3sn/rng.hpp"
#include "json.hpp"

namespace a3sn {

const char* to_string(Polarity p) {
    switch (p) {
        case Polarity::Positive: return "positive";
        case Polarity::Negative: return "negative";
        case Polarity::Neutral: return "neutral";
    }
    throw ContractError("unknown polarity value");
}

Polarity polarity_from_string(const std::string& s) {
    if (s == "positive") return Polarity::Positive;
    if (s == "negative") return Polarity::Negative;
    if (s == "neutral") return Polarity::Neutral;
    throw DataError("unknown polarity \"" + s + "\"");
}

const char* to_string(Segment s) {
    switch (s) {
        case Segment::CLS: return "CLS";
        case Segment::SENT: return "SENT";
        case Segment::SEP1: return "SEP1";
        case Segment::ASP: return "ASP";
        case Segment::SEP2: return "SEP2";
        case Segment::PAD: return "PAD";
    }
    throw ContractError("unknown segment value");
}

// ---- Vocabulary -------------------------------------------------------------

Vocabulary::Vocabulary() {
    id_to_token_ = {"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
    for (int i = 0; i < 4; ++i) token_to_id_[id_to_token_[i]] = i;
}

int Vocabulary::add_token(const std::string& token) {
    if (token_to_id_.count(token)) {
        throw DataError("token \"" + token + "\" already present in vocabulary");
    }
    const int id = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(token);
    token_to_id_[token] = id;
    return id;
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
        throw DataError("vocabulary id " + std::to_string(id) + " out of range");
    }
    return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
    return token_to_id_.count(token) != 0;
}

// ---- tokenization -------------------------------------------------------------

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c)) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        }
        // punctuation is dropped
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocabulary build_vocab(const std::vector<Example>& corpus, std::size_t min_count) {
    if (corpus.empty()) throw DataError("build_vocab: empty corpus");
    std::unordered_map<std::string, std::size_t> counts;
    for (const Example& ex : corpus) {
        for (const std::string& t : ex.sentence) ++counts[t];
        for (const std::string& t : ex.aspect) ++counts[t];
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    kept.reserve(counts.size());
    for (const auto& [token, count] : counts) {
        if (count >= min_count) kept.emplace_back(token, count);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary vocab;
    for (const auto& [token, count] : kept) vocab.add_token(token);
    return vocab;
}

// ---- encoding -----------------------------------------------------------------

EncodedInput encode(const Example& ex, const Vocabulary& vocab, std::size_t max_len) {
    if (ex.aspect.empty()) throw EncodingError("encode: aspect must be nonempty");
    if (max_len < ex.aspect.size() + 3) {
        throw EncodingError("encode: aspect of " + std::to_string(ex.aspect.size()) +
                            " tokens does not fit max_len " + std::to_string(max_len));
    }
    const std::size_t keep_sentence = std::min(ex.sentence.size(), max_len - 3 - ex.aspect.size());

    EncodedInput enc;
    enc.ids.reserve(max_len);
    enc.segments.reserve(max_len);
    enc.ids.push_back(Vocabulary::kCls);
    enc.segments.push_back(Segment::CLS);
    for (std::size_t i = 0; i < keep_sentence; ++i) {
        enc.ids.push_back(vocab.id_of(ex.sentence[i]));
        enc.segments.push_back(Segment::SENT);
    }
    enc.ids.push_back(Vocabulary::kSep);
    enc.segments.push_back(Segment::SEP1);
    for (const std::string& t : ex.aspect) {
        enc.ids.push_back(vocab.id_of(t));
        enc.segments.push_back(Segment::ASP);
    }
    enc.ids.push_back(Vocabulary::kSep);
    enc.segments.push_back(Segment::SEP2);
    while (enc.ids.size() < max_len) {
        enc.ids.push_back(Vocabulary::kPad);
        enc.segments.push_back(Segment::PAD);
    }
    enc.pad_mask.resize(max_len);
    for (std::size_t i = 0; i < max_len; ++i) {
        enc.pad_mask[i] = enc.segments[i] == Segment::PAD ? 0.0 : 1.0;
    }
    enc.amplify = build_amplify(enc.segments);
    enc.label_id = static_cast<int>(ex.label);
    return enc;
}

Example decode(const EncodedInput& enc, const Vocabulary& vocab) {
    Example ex;
    for (std::size_t i = 0; i < enc.length(); ++i) {
        if (enc.segments[i] == Segment::SENT) ex.sentence.push_back(vocab.token_of(enc.ids[i]));
        if (enc.segments[i] == Segment::ASP) ex.aspect.push_back(vocab.token_of(enc.ids[i]));
    }
    ex.label = static_cast<Polarity>(enc.label_id);
    return ex;
}

std::vector<double> build_amplify(const std::vector<Segment>& segments) {
    const std::size_t n = segments.size();
    std::vector<double> amp(n * n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const bool cross = (segments[i] == Segment::SENT && segments[j] == Segment::ASP) ||
                               (segments[i] == Segment::ASP && segments[j] == Segment::SENT);
            if (cross) amp[i * n + j] = 2.0;
        }
    }
    return amp;
}

// ---- JSONL --------------------------------------------------------------------

std::vector<Example> load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file " + path);
    std::vector<Example> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + " line " + std::to_string(line_no) + ": invalid JSON (" +
                            e.what() + ")");
        }
        if (!obj.is_object() || !obj.contains("text") || !obj.contains("aspect") ||
            !obj.contains("polarity") || !obj["text"].is_string() || !obj["aspect"].is_string() ||
            !obj["polarity"].is_string()) {
            throw DataError(path + " line " + std::to_string(line_no) +
                            ": expected string fields text, aspect, polarity");
        }
        Example ex;
        ex.sentence = tokenize(obj["text"].get<std::string>());
        ex.aspect = tokenize(obj["aspect"].get<std::string>());
        if (ex.aspect.empty()) {
            throw DataError(path + " line " + std::to_string(line_no) + ": empty aspect");
        }
        try {
            ex.label = polarity_from_string(obj["polarity"].get<std::string>());
        } catch (const DataError& e) {
            throw DataError(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
        out.push_back(std::move(ex));
    }
    return out;
}

namespace {

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) s.push_back(' ');
        s += tokens[i];
    }
    return s;
}

} // namespace

void save_jsonl(const std::vector<Example>& examples, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write dataset file " + path);
    for (const Example& ex : examples) {
        nlohmann::json obj;
        obj["text"] = join_tokens(ex.sentence);
        obj["aspect"] = join_tokens(ex.aspect);
        obj["polarity"] = to_string(ex.label);
        out << obj.dump() << "\n";
    }
    if (!out) throw DataError("failed while writing " + path);
}

// ---- synthetic task -------------------------------------------------------------

namespace {

struct AspectLexicon {
    const char* aspect;
    const char* words[3]; // positive, negative, neutral
};

constexpr AspectLexicon kLexicon[] = {
    {"battery", {"durable", "drained", "standard"}},
    {"screen", {"vivid", "cracked", "plain"}},
    {"food", {"delicious", "bland", "ordinary"}},
    {"service", {"attentive", "rude", "average"}},
};
constexpr std::size_t kNumAspects = sizeof(kLexicon) / sizeof(kLexicon[0]);
constexpr std::size_t kFixedWords = kNumAspects * 4; // aspects + 3 sentiment words each

} // namespace

std::vector<Example> synth_dataset(std::size_t n, std::uint64_t seed, std::size_t vocab_size) {
    if (n == 0) throw DataError("synth_dataset: n must be positive");
    const std::size_t filler_count = vocab_size > kFixedWords + 2 ? vocab_size - kFixedWords : 2;
    std::vector<std::string> fillers(filler_count);
    for (std::size_t i = 0; i < filler_count; ++i) fillers[i] = "w" + std::to_string(i);

    Rng rng = Rng::derive(seed, 0x5f17);
    std::vector<Example> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t target = rng.next_below(kNumAspects);
        const std::size_t distractor = (target + 1 + rng.next_below(kNumAspects - 1)) % kNumAspects;
        const int label = static_cast<int>(rng.next_below(3));
        // The distractor always carries a different polarity, so the label is
        // decidable only by pairing the sentiment word with the queried aspect.
        const int distractor_label = (label + 1 + static_cast<int>(rng.next_below(2))) % 3;
        const bool target_first = rng.next_below(2) == 0;

        std::vector<std::string> clause_t = {kLexicon[target].words[label], kLexicon[target].aspect};
        std::vector<std::string> clause_d = {kLexicon[distractor].words[distractor_label],
                                             kLexicon[distractor].aspect};

        Example ex;
        if (rng.next_below(4) == 0) ex.sentence.push_back(fillers[rng.next_below(filler_count)]);
        const auto& first = target_first ? clause_t : clause_d;
        const auto& second = target_first ? clause_d : clause_t;
        ex.sentence.insert(ex.sentence.end(), first.begin(), first.end());
        ex.sentence.insert(ex.sentence.end(), second.begin(), second.end());
        if (rng.next_below(4) == 0) ex.sentence.push_back(fillers[rng.next_below(filler_count)]);

        ex.aspect = {kLexicon[target].aspect};
        ex.label = static_cast<Polarity>(label);
        out.push_back(std::move(ex));
    }
    return out;
}

} // namespace a3sn
