#include "nitp/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "nitp/rng.hpp"

namespace nitp {

std::vector<int32_t> tokenize_bytes(const std::string& text) {
    std::vector<int32_t> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<int32_t>(c));
    return ids;
}

std::string detokenize(const std::vector<int32_t>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int32_t id : ids) {
        if (id < 0 || id > 255) throw std::out_of_range("detokenize: id " + std::to_string(id));
        out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw std::runtime_error("error reading corpus file: " + path.string());
    return bytes;
}

CorpusBatcher::CorpusBatcher(std::vector<uint8_t> bytes, int64_t seq_len, int64_t batch_size, uint64_t seed)
    : bytes_(std::move(bytes)), seq_len_(seq_len), batch_size_(batch_size), seed_(seed) {
    if (seq_len_ < 2 || batch_size_ < 1) throw std::invalid_argument("batcher: seq_len >= 2, batch_size >= 1");
    num_chunks_ = static_cast<int64_t>(bytes_.size()) / seq_len_;
    if (num_chunks_ < batch_size_) {
        throw std::runtime_error("corpus too small: " + std::to_string(bytes_.size()) + " bytes yield " +
                                 std::to_string(num_chunks_) + " chunks, need at least " +
                                 std::to_string(batch_size_));
    }
}

std::vector<std::vector<int32_t>> CorpusBatcher::batch(int64_t step) const {
    if (step < 1) throw std::invalid_argument("batcher: steps are 1-based");
    int64_t bpe = batches_per_epoch();
    int64_t epoch = (step - 1) / bpe;
    int64_t slot = (step - 1) % bpe;
    if (epoch != cached_epoch_) {
        perm_.resize(num_chunks_);
        std::iota(perm_.begin(), perm_.end(), 0);
        std::mt19937_64 rng(derive_seed(seed_, "data-order", static_cast<uint64_t>(epoch)));
        for (int64_t i = num_chunks_ - 1; i > 0; --i) {
            std::uniform_int_distribution<int64_t> pick(0, i);
            std::swap(perm_[i], perm_[pick(rng)]);
        }
        cached_epoch_ = epoch;
    }
    std::vector<std::vector<int32_t>> out;
    out.reserve(batch_size_);
    for (int64_t b = 0; b < batch_size_; ++b) {
        int64_t chunk = perm_[slot * batch_size_ + b];
        std::vector<int32_t> seq(seq_len_);
        for (int64_t i = 0; i < seq_len_; ++i) seq[i] = static_cast<int32_t>(bytes_[chunk * seq_len_ + i]);
        out.push_back(std::move(seq));
    }
    return out;
}

}  // namespace nitp
