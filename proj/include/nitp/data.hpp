#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nitp {

// Byte-level tokenization: token id == byte value, vocabulary 256.
std::vector<int32_t> tokenize_bytes(const std::string& text);
std::string detokenize(const std::vector<int32_t>& ids);

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);

// Deterministic contiguous-chunk batching: the corpus is split into
// non-overlapping seq_len windows whose order is reshuffled per epoch with a
// seeded rng. batch(step) is a pure function of (bytes, seed, step), so a
// resumed run continues the exact batch sequence.
class CorpusBatcher {
public:
    CorpusBatcher(std::vector<uint8_t> bytes, int64_t seq_len, int64_t batch_size, uint64_t seed);

    std::vector<std::vector<int32_t>> batch(int64_t step) const;  // step >= 1

    int64_t num_chunks() const { return num_chunks_; }
    int64_t batches_per_epoch() const { return num_chunks_ / batch_size_; }

private:
    std::vector<uint8_t> bytes_;
    int64_t seq_len_;
    int64_t batch_size_;
    uint64_t seed_;
    int64_t num_chunks_;
    mutable int64_t cached_epoch_ = -1;
    mutable std::vector<int64_t> perm_;
};

}  // namespace nitp
