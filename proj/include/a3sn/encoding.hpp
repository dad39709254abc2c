#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "a3sn/errors.hpp"

namespace a3sn {

// Positional segment kinds of an encoded sequence:
// [CLS] sentence... [SEP] aspect... [SEP] padding...
enum class Segment : std::uint8_t { CLS = 0, SENT = 1, SEP1 = 2, ASP = 3, SEP2 = 4, PAD = 5 };

enum class Polarity : int { Positive = 0, Negative = 1, Neutral = 2 };

const char* to_string(Polarity p);
Polarity polarity_from_string(const std::string& s); // DataError on unknown value
const char* to_string(Segment s);

// Token/id map with fixed reserved ids. Immutable once built.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kCls = 1;
    static constexpr int kSep = 2;
    static constexpr int kUnk = 3;

    Vocabulary();

    // Adds a non-reserved token; returns its id. Re-adding is an error.
    int add_token(const std::string& token);
    // Id of a token, or [UNK] when absent.
    int id_of(const std::string& token) const;
    const std::string& token_of(int id) const;
    bool contains(const std::string& token) const;
    std::size_t size() const { return id_to_token_.size(); }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

struct Example {
    std::vector<std::string> sentence;
    std::vector<std::string> aspect;
    Polarity label = Polarity::Positive;

    bool operator==(const Example&) const = default;
};

// One model-ready input. Length is always max_len; trailing positions are PAD.
struct EncodedInput {
    std::vector<int> ids;
    std::vector<Segment> segments;
    std::vector<double> pad_mask;  // 1 on real positions, 0 on PAD
    std::vector<double> amplify;   // N×N row-major, values in {1, 2}
    int label_id = 0;

    std::size_t length() const { return ids.size(); }

    bool operator==(const EncodedInput&) const = default;
};

// Lowercased alphanumeric word split; punctuation is stripped.
std::vector<std::string> tokenize(const std::string& text);

// Frequency-filtered vocabulary: tokens with count >= min_count, assigned ids
// in (frequency desc, token asc) order after the reserved block.
Vocabulary build_vocab(const std::vector<Example>& corpus, std::size_t min_count);

// Lays out [CLS] sentence [SEP] aspect [SEP] padded to max_len. The sentence
// is truncated from the right when the budget is exceeded; the aspect never is.
EncodedInput encode(const Example& ex, const Vocabulary& vocab, std::size_t max_len);

// Inverse of encode for the non-truncated, in-vocabulary part.
Example decode(const EncodedInput& enc, const Vocabulary& vocab);

// N×N matrix with 2 on sentence<->aspect position pairs and 1 elsewhere.
std::vector<double> build_amplify(const std::vector<Segment>& segments);

// One JSON object per line with keys text, aspect, polarity.
std::vector<Example> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<Example>& examples, const std::string& path);

// Two-aspect toy task: a sentiment word planted next to the target aspect
// decides the label while a distractor aspect carries its own sentiment word.
std::vector<Example> synth_dataset(std::size_t n, std::uint64_t seed, std::size_t vocab_size);

} // namespace a3sn
