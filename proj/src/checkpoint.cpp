#include "nitp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace nitp {

namespace {

using json = nlohmann::ordered_json;

static_assert(sizeof(float) == 4, "binary32 storage requires 4-byte float");

std::filesystem::path manifest_path(const std::filesystem::path& stem_or_manifest) {
    if (stem_or_manifest.extension() == ".json") return stem_or_manifest;
    std::filesystem::path p = stem_or_manifest;
    p += ".json";
    return p;
}

void write_le_f32(std::ofstream& out, const std::vector<double>& values) {
    std::vector<unsigned char> buf(values.size() * 4);
    for (size_t i = 0; i < values.size(); ++i) {
        float f = static_cast<float>(values[i]);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        buf[4 * i] = static_cast<unsigned char>(bits & 0xff);
        buf[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
        buf[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
        buf[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::vector<double> read_le_f32(std::ifstream& in, int64_t offset, int64_t len) {
    if (len % 4 != 0) throw std::runtime_error("tensor file: byte_len not a multiple of 4");
    std::vector<unsigned char> buf(static_cast<size_t>(len));
    in.seekg(offset);
    in.read(reinterpret_cast<char*>(buf.data()), len);
    if (!in) throw std::runtime_error("tensor file: blob read failed");
    std::vector<double> values(static_cast<size_t>(len / 4));
    for (size_t i = 0; i < values.size(); ++i) {
        uint32_t bits = static_cast<uint32_t>(buf[4 * i]) | (static_cast<uint32_t>(buf[4 * i + 1]) << 8) |
                        (static_cast<uint32_t>(buf[4 * i + 2]) << 16) |
                        (static_cast<uint32_t>(buf[4 * i + 3]) << 24);
        float f;
        std::memcpy(&f, &bits, 4);
        values[i] = static_cast<double>(f);
    }
    return values;
}

std::string ffn_kind_str(FfnKind k) { return k == FfnKind::dense ? "dense" : "moe"; }

}  // namespace

void write_tensor_file(const std::filesystem::path& stem,
                       const std::vector<std::pair<std::string, const Tensor*>>& tensors,
                       const std::map<std::string, std::string>& meta) {
    std::filesystem::path mpath = manifest_path(stem);
    std::filesystem::path bpath = stem;
    bpath += ".bin";

    json manifest;
    manifest["schema"] = "nitp-tensors-v1";
    manifest["blob"] = bpath.filename().string();
    json jmeta = json::object();
    for (const auto& [k, v] : meta) jmeta[k] = v;
    manifest["meta"] = jmeta;

    std::ofstream blob(bpath, std::ios::binary | std::ios::trunc);
    if (!blob) throw std::runtime_error("cannot write blob: " + bpath.string());
    json jtensors = json::array();
    int64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        json e;
        e["name"] = name;
        e["shape"] = t->shape;
        e["dtype"] = "f32";
        e["byte_offset"] = offset;
        e["byte_len"] = t->numel() * 4;
        jtensors.push_back(e);
        write_le_f32(blob, t->values);
        offset += t->numel() * 4;
    }
    blob.close();
    if (!blob) throw std::runtime_error("blob write failed: " + bpath.string());
    manifest["tensors"] = jtensors;

    std::ofstream mf(mpath, std::ios::trunc);
    if (!mf) throw std::runtime_error("cannot write manifest: " + mpath.string());
    mf << manifest.dump(2) << "\n";
    mf.close();
    if (!mf) throw std::runtime_error("manifest write failed: " + mpath.string());
}

TensorFile read_tensor_file(const std::filesystem::path& stem_or_manifest) {
    std::filesystem::path mpath = manifest_path(stem_or_manifest);
    std::ifstream mf(mpath);
    if (!mf) throw std::runtime_error("cannot open manifest: " + mpath.string());
    json manifest = json::parse(mf);
    if (manifest.value("schema", "") != "nitp-tensors-v1") {
        throw std::runtime_error("tensor file: unknown schema in " + mpath.string());
    }
    std::filesystem::path bpath = mpath.parent_path() / manifest.at("blob").get<std::string>();
    std::ifstream blob(bpath, std::ios::binary);
    if (!blob) throw std::runtime_error("cannot open blob: " + bpath.string());

    TensorFile tf;
    if (manifest.contains("meta")) {
        for (auto& [k, v] : manifest["meta"].items()) tf.meta[k] = v.get<std::string>();
    }
    for (const json& e : manifest.at("tensors")) {
        std::string name = e.at("name").get<std::string>();
        Shape shape = e.at("shape").get<Shape>();
        if (e.at("dtype").get<std::string>() != "f32") {
            throw std::runtime_error("tensor file: unsupported dtype for " + name);
        }
        std::vector<double> values =
            read_le_f32(blob, e.at("byte_offset").get<int64_t>(), e.at("byte_len").get<int64_t>());
        tf.tensors.emplace(name, Tensor(shape, std::move(values)));
    }
    return tf;
}

void save_checkpoint(const std::filesystem::path& stem, const Model& model, const Projector* projector,
                     AdamW* optimizer, int64_t step) {
    std::vector<std::pair<std::string, const Tensor*>> tensors;
    Model& m = const_cast<Model&>(model);
    std::vector<NamedParam> params = m.parameters();
    for (const NamedParam& p : params) tensors.emplace_back(p.name, p.tensor);

    std::vector<NamedParam> proj_params;
    if (projector) {
        proj_params = const_cast<Projector*>(projector)->parameters();
        for (const NamedParam& p : proj_params) tensors.emplace_back(p.name, p.tensor);
    }

    std::vector<Tensor> moment_storage;
    if (optimizer) {
        std::vector<NamedParam> all = params;
        all.insert(all.end(), proj_params.begin(), proj_params.end());
        moment_storage.reserve(2 * all.size());
        for (const NamedParam& p : all) {
            auto it = optimizer->slots().find(p.name);
            std::vector<double> m1(p.tensor->values.size(), 0.0), m2(p.tensor->values.size(), 0.0);
            if (it != optimizer->slots().end()) {
                m1 = it->second.m;
                m2 = it->second.v;
            }
            moment_storage.push_back(Tensor(p.tensor->shape, std::move(m1)));
            moment_storage.push_back(Tensor(p.tensor->shape, std::move(m2)));
        }
        size_t idx = 0;
        for (const NamedParam& p : all) {
            tensors.emplace_back("opt.m." + p.name, &moment_storage[idx++]);
            tensors.emplace_back("opt.v." + p.name, &moment_storage[idx++]);
        }
    }

    const ModelConfig& c = model.config();
    std::map<std::string, std::string> meta;
    meta["step"] = std::to_string(step);
    meta["model.vocab_size"] = std::to_string(c.vocab_size);
    meta["model.hidden_dim"] = std::to_string(c.hidden_dim);
    meta["model.num_layers"] = std::to_string(c.num_layers);
    meta["model.num_q_heads"] = std::to_string(c.num_q_heads);
    meta["model.num_kv_heads"] = std::to_string(c.num_kv_heads);
    meta["model.head_dim"] = std::to_string(c.head_dim);
    meta["model.ffn_kind"] = ffn_kind_str(c.ffn_kind);
    meta["model.dense_ffn_dim"] = std::to_string(c.dense_ffn_dim);
    meta["model.num_experts"] = std::to_string(c.num_experts);
    meta["model.experts_per_token"] = std::to_string(c.experts_per_token);
    meta["model.expert_ffn_dim"] = std::to_string(c.expert_ffn_dim);
    meta["model.max_seq_len"] = std::to_string(c.max_seq_len);
    meta["model.seed"] = std::to_string(c.seed);
    meta["has_projector"] = projector ? "1" : "0";
    if (projector) {
        meta["projector_hidden_mult"] = std::to_string(projector->w_gate.shape[1] / c.hidden_dim);
    }
    meta["has_optimizer"] = optimizer ? "1" : "0";
    if (optimizer) meta["optimizer_steps"] = std::to_string(optimizer->steps_taken());
    write_tensor_file(stem, tensors, meta);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& stem_or_manifest) {
    LoadedCheckpoint out;
    out.file = read_tensor_file(stem_or_manifest);
    auto& meta = out.file.meta;
    auto geti = [&](const std::string& k) {
        auto it = meta.find(k);
        if (it == meta.end()) throw std::runtime_error("checkpoint: missing meta key " + k);
        return std::stoll(it->second);
    };
    out.step = geti("step");
    ModelConfig& c = out.config;
    c.vocab_size = geti("model.vocab_size");
    c.hidden_dim = geti("model.hidden_dim");
    c.num_layers = geti("model.num_layers");
    c.num_q_heads = geti("model.num_q_heads");
    c.num_kv_heads = geti("model.num_kv_heads");
    c.head_dim = geti("model.head_dim");
    c.ffn_kind = meta.at("model.ffn_kind") == "dense" ? FfnKind::dense : FfnKind::moe;
    c.dense_ffn_dim = geti("model.dense_ffn_dim");
    c.num_experts = geti("model.num_experts");
    c.experts_per_token = geti("model.experts_per_token");
    c.expert_ffn_dim = geti("model.expert_ffn_dim");
    c.max_seq_len = geti("model.max_seq_len");
    c.seed = static_cast<uint64_t>(geti("model.seed"));
    out.has_projector = meta.count("has_projector") && meta.at("has_projector") == "1";
    if (out.has_projector) out.projector_hidden_mult = geti("projector_hidden_mult");
    return out;
}

namespace {

void copy_values(Tensor& dst, const Tensor& src, const std::string& name) {
    if (dst.shape != src.shape) {
        throw std::runtime_error("checkpoint: shape mismatch for " + name + ": " + shape_str(dst.shape) + " vs " +
                                 shape_str(src.shape));
    }
    dst.values = src.values;
}

}  // namespace

void restore_model(Model& model, const LoadedCheckpoint& ckpt) {
    for (NamedParam& p : model.parameters()) {
        auto it = ckpt.file.tensors.find(p.name);
        if (it == ckpt.file.tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + p.name);
        copy_values(*p.tensor, it->second, p.name);
    }
}

void restore_projector(Projector& projector, const LoadedCheckpoint& ckpt) {
    for (NamedParam& p : projector.parameters()) {
        auto it = ckpt.file.tensors.find(p.name);
        if (it == ckpt.file.tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + p.name);
        copy_values(*p.tensor, it->second, p.name);
    }
}

void restore_optimizer(AdamW& optimizer, std::span<NamedParam> params, const LoadedCheckpoint& ckpt) {
    auto it = ckpt.file.meta.find("optimizer_steps");
    if (it == ckpt.file.meta.end()) throw std::runtime_error("checkpoint: no optimizer state stored");
    optimizer.set_steps_taken(std::stoll(it->second));
    for (const NamedParam& p : params) {
        auto mi = ckpt.file.tensors.find("opt.m." + p.name);
        auto vi = ckpt.file.tensors.find("opt.v." + p.name);
        if (mi == ckpt.file.tensors.end() || vi == ckpt.file.tensors.end()) {
            throw std::runtime_error("checkpoint: missing optimizer moments for " + p.name);
        }
        AdamW::Slot& slot = optimizer.slots()[p.name];
        slot.m = mi->second.values;
        slot.v = vi->second.values;
    }
}

void round_through_f32(std::span<NamedParam> params, AdamW* optimizer) {
    auto round_vec = [](std::vector<double>& v) {
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    };
    for (const NamedParam& p : params) round_vec(p.tensor->values);
    if (optimizer) {
        for (auto& [name, slot] : optimizer->slots()) {
            round_vec(slot.m);
            round_vec(slot.v);
        }
    }
}

}  // namespace nitp
