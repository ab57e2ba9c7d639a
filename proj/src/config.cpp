#include "nitp/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nitp {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Typed view over one section that tracks which keys were consumed so any
// leftover key is an error.
class SectionReader {
public:
    SectionReader(const std::string& name, const std::map<std::string, std::string>& kv) : name_(name), kv_(kv) {}

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string str(const std::string& key, const std::string& fallback) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        used_.push_back(key);
        return it->second;
    }
    std::string require_str(const std::string& key) {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw std::runtime_error("config: [" + name_ + "] missing required key '" + key + "'");
        used_.push_back(key);
        return it->second;
    }
    int64_t integer(const std::string& key, int64_t fallback) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        used_.push_back(key);
        try {
            size_t pos = 0;
            int64_t v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw std::runtime_error("config: [" + name_ + "] key '" + key + "' is not an integer: " + it->second);
        }
    }
    double real(const std::string& key, double fallback) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        used_.push_back(key);
        try {
            size_t pos = 0;
            double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw std::runtime_error("config: [" + name_ + "] key '" + key + "' is not a number: " + it->second);
        }
    }
    bool boolean(const std::string& key, bool fallback) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        used_.push_back(key);
        std::string v = it->second;
        std::transform(v.begin(), v.end(), v.begin(), ::tolower);
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw std::runtime_error("config: [" + name_ + "] key '" + key + "' is not a boolean: " + it->second);
    }

    void finish() const {
        for (const auto& [key, value] : kv_) {
            if (std::find(used_.begin(), used_.end(), key) == used_.end()) {
                throw std::runtime_error("config: unknown key '" + key + "' in section [" + name_ + "]");
            }
        }
    }

private:
    std::string name_;
    const std::map<std::string, std::string>& kv_;
    std::vector<std::string> used_;
};

const std::map<std::string, std::string>& section_or_empty(const IniSections& s, const std::string& name) {
    static const std::map<std::string, std::string> empty;
    auto it = s.find(name);
    return it == s.end() ? empty : it->second;
}

void reject_unknown_sections(const IniSections& s, std::initializer_list<const char*> allowed) {
    for (const auto& [name, kv] : s) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || name == a;
        if (!ok) throw std::runtime_error("config: unknown section [" + name + "]");
    }
}

FfnKind parse_ffn_kind(const std::string& v) {
    if (v == "dense") return FfnKind::dense;
    if (v == "moe") return FfnKind::moe;
    throw std::runtime_error("config: ffn_kind must be 'dense' or 'moe', got '" + v + "'");
}

}  // namespace

IniSections parse_ini(const std::string& text) {
    IniSections out;
    std::string section;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw std::runtime_error("config: malformed section header at line " +
                                                          std::to_string(lineno));
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) throw std::runtime_error("config: empty section name at line " +
                                                          std::to_string(lineno));
            if (out.count(section)) throw std::runtime_error("config: duplicate section [" + section + "]");
            out[section];
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config: expected key=value at line " + std::to_string(lineno));
        }
        if (section.empty()) {
            throw std::runtime_error("config: key outside any section at line " + std::to_string(lineno));
        }
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key.empty()) throw std::runtime_error("config: empty key at line " + std::to_string(lineno));
        if (out[section].count(key)) {
            throw std::runtime_error("config: duplicate key '" + key + "' in section [" + section + "]");
        }
        out[section][key] = val;
    }
    return out;
}

IniSections parse_ini_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_ini(buf.str());
}

void RunConfig::validate() const {
    model.validate();
    objective.validate(model);
    train.validate();
    if (train.seq_len > model.max_seq_len) {
        throw std::runtime_error("config: seq_len " + std::to_string(train.seq_len) + " exceeds max_seq_len " +
                                 std::to_string(model.max_seq_len));
    }
    if (corpus_path.empty()) throw std::runtime_error("config: [run] corpus is required");
    if (out_dir.empty()) throw std::runtime_error("config: [run] out_dir is required");
}

RunConfig run_config_from_sections(const IniSections& sections) {
    reject_unknown_sections(sections, {"model", "objective", "train", "run"});
    RunConfig rc;
    {
        SectionReader r("model", section_or_empty(sections, "model"));
        ModelConfig& m = rc.model;
        m.vocab_size = r.integer("vocab_size", m.vocab_size);
        m.hidden_dim = r.integer("hidden_dim", m.hidden_dim);
        m.num_layers = r.integer("num_layers", m.num_layers);
        m.num_q_heads = r.integer("num_q_heads", m.num_q_heads);
        m.num_kv_heads = r.integer("num_kv_heads", m.num_kv_heads);
        m.head_dim = r.integer("head_dim", m.head_dim);
        m.ffn_kind = parse_ffn_kind(r.str("ffn_kind", m.ffn_kind == FfnKind::dense ? "dense" : "moe"));
        m.dense_ffn_dim = r.integer("dense_ffn_dim", m.dense_ffn_dim);
        m.num_experts = r.integer("num_experts", m.num_experts);
        m.experts_per_token = r.integer("experts_per_token", m.experts_per_token);
        m.expert_ffn_dim = r.integer("expert_ffn_dim", m.expert_ffn_dim);
        m.max_seq_len = r.integer("max_seq_len", m.max_seq_len);
        m.seed = static_cast<uint64_t>(r.integer("seed", static_cast<int64_t>(m.seed)));
        r.finish();
    }
    {
        SectionReader r("objective", section_or_empty(sections, "objective"));
        ObjectiveConfig& o = rc.objective;
        o.lambda = r.real("lambda", o.lambda);
        o.target_layer = r.integer("target_layer", o.target_layer);
        std::string shift = r.str("temporal_shift", "next_token");
        if (shift == "next_token")
            o.temporal_shift = TemporalShift::next_token;
        else if (shift == "current_step")
            o.temporal_shift = TemporalShift::current_step;
        else
            throw std::runtime_error("config: temporal_shift must be next_token or current_step");
        std::string fam = r.str("loss_family", "cosine");
        if (fam == "cosine")
            o.loss_family = LossFamily::cosine;
        else if (fam == "mse")
            o.loss_family = LossFamily::mse;
        else if (fam == "smooth_l1")
            o.loss_family = LossFamily::smooth_l1;
        else if (fam == "kl")
            o.loss_family = LossFamily::kl;
        else if (fam == "generic_cosine_reg")
            o.loss_family = LossFamily::generic_cosine_reg;
        else
            throw std::runtime_error("config: unknown loss_family '" + fam + "'");
        o.use_projector = r.boolean("use_projector", o.use_projector);
        o.projector_hidden_mult = r.integer("projector_hidden_mult", o.projector_hidden_mult);
        o.stop_gradient_targets = r.boolean("stop_gradient_targets", o.stop_gradient_targets);
        o.nitp_start_step = r.integer("nitp_start_step", o.nitp_start_step);
        o.kl_temperature = r.real("kl_temperature", o.kl_temperature);
        o.smooth_l1_beta = r.real("smooth_l1_beta", o.smooth_l1_beta);
        r.finish();
    }
    {
        SectionReader r("train", section_or_empty(sections, "train"));
        TrainConfig& t = rc.train;
        t.peak_lr = r.real("peak_lr", t.peak_lr);
        t.warmup_steps = r.integer("warmup_steps", t.warmup_steps);
        t.decay_ratio = r.real("decay_ratio", t.decay_ratio);
        t.total_steps = r.integer("total_steps", t.total_steps);
        t.adam_beta1 = r.real("adam_beta1", t.adam_beta1);
        t.adam_beta2 = r.real("adam_beta2", t.adam_beta2);
        t.adam_eps = r.real("adam_eps", t.adam_eps);
        t.weight_decay = r.real("weight_decay", t.weight_decay);
        t.grad_clip = r.real("grad_clip", t.grad_clip);
        t.batch_size = r.integer("batch_size", t.batch_size);
        t.seq_len = r.integer("seq_len", t.seq_len);
        t.seed = static_cast<uint64_t>(r.integer("seed", static_cast<int64_t>(t.seed)));
        t.snapshot_every = r.integer("snapshot_every", t.snapshot_every);
        t.log_every = r.integer("log_every", t.log_every);
        t.checkpoint_every = r.integer("checkpoint_every", t.checkpoint_every);
        r.finish();
    }
    {
        SectionReader r("run", section_or_empty(sections, "run"));
        rc.corpus_path = r.str("corpus", "");
        rc.out_dir = r.str("out_dir", "");
        r.finish();
    }
    rc.validate();
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    return run_config_from_sections(parse_ini_file(path));
}

ArchSpec load_arch_config(const std::filesystem::path& path) {
    IniSections sections = parse_ini_file(path);
    reject_unknown_sections(sections, {"arch"});
    SectionReader r("arch", section_or_empty(sections, "arch"));
    ArchSpec a;
    a.d = r.integer("d", 0);
    a.L = r.integer("num_layers", 0);
    a.V = r.integer("vocab_size", 0);
    std::string kind = r.str("ffn_kind", "moe");
    if (kind == "dense") {
        a.dense = true;
        a.dense_ffn_dim = r.integer("dense_ffn_dim", 0);
    } else if (kind == "moe") {
        a.dense = false;
        a.k = r.integer("activated_experts", 0);
        a.d_e = r.integer("expert_ffn_dim", 0);
    } else {
        throw std::runtime_error("config: [arch] ffn_kind must be dense or moe");
    }
    r.finish();
    a.validate();
    return a;
}

}  // namespace nitp
