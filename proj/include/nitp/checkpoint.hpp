#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nitp/model.hpp"
#include "nitp/objectives.hpp"
#include "nitp/optim.hpp"

namespace nitp {

// Tensor file format: a JSON text manifest ("<stem>.json") listing
// {name, shape, dtype:"f32", byte_offset, byte_len} entries that reference a
// flat little-endian binary32 blob ("<stem>.bin") in row-major order.
struct TensorFile {
    std::map<std::string, Tensor> tensors;   // values round-tripped through f32
    std::map<std::string, std::string> meta; // flat string metadata from the manifest
};

void write_tensor_file(const std::filesystem::path& stem,
                       const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                       const std::map<std::string, std::string>& meta);

TensorFile read_tensor_file(const std::filesystem::path& stem_or_manifest);

// Checkpoint = tensor file holding model parameters (and, when training,
// projector parameters plus AdamW moments) with the model config echoed in
// the manifest metadata.
void save_checkpoint(const std::filesystem::path& stem, const Model& model, const Projector* projector,
                     AdamW* optimizer, int64_t step);

struct LoadedCheckpoint {
    ModelConfig config;
    int64_t step = 0;
    bool has_projector = false;
    int64_t projector_hidden_mult = 0;
    TensorFile file;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& stem_or_manifest);

// Copies parameter values (already f32-quantized by the file round trip) into
// the model / projector / optimizer state.
void restore_model(Model& model, const LoadedCheckpoint& ckpt);
void restore_projector(Projector& projector, const LoadedCheckpoint& ckpt);
void restore_optimizer(AdamW& optimizer, std::span<NamedParam> params, const LoadedCheckpoint& ckpt);

// Rounds every value through binary32, matching what a save + load cycle
// produces. The trainer applies this right after writing a checkpoint so an
// uninterrupted run and a resumed run follow the same trajectory bit for bit.
void round_through_f32(std::span<NamedParam> params, AdamW* optimizer);

}  // namespace nitp
