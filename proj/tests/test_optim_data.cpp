#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nitp/config.hpp"
#include "nitp/data.hpp"
#include "nitp/optim.hpp"

using namespace nitp;

namespace {

TrainConfig schedule_config(double peak, int64_t warmup, double decay, int64_t total) {
    TrainConfig c;
    c.peak_lr = peak;
    c.warmup_steps = warmup;
    c.decay_ratio = decay;
    c.total_steps = total;
    return c;
}

}  // namespace

TEST_CASE("wsd schedule endpoints and plateau") {
    TrainConfig c = schedule_config(0.4, 100, 0.2, 1000);
    CHECK(wsd_lr(0, c) == 0.0);
    CHECK(wsd_lr(100, c) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(wsd_lr(500, c) == 0.4);
    CHECK(wsd_lr(800, c) == 0.4);
    CHECK(wsd_lr(900, c) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(wsd_lr(1000, c) == 0.0);
    CHECK_THROWS_AS(wsd_lr(-1, c), std::out_of_range);
    CHECK_THROWS_AS(wsd_lr(1001, c), std::out_of_range);
}

TEST_CASE("wsd schedule is continuous in step") {
    TrainConfig c = schedule_config(1.0, 37, 0.3, 500);
    double max_jump_allowed = c.peak_lr / 37.0 + 1e-12;  // steepest segment is the warmup ramp
    for (int64_t s = 1; s <= 500; ++s) {
        CHECK(std::abs(wsd_lr(s, c) - wsd_lr(s - 1, c)) <= max_jump_allowed);
    }
}

TEST_CASE("adamw fixed points and decay factor") {
    TrainConfig c;
    c.weight_decay = 0.0;
    AdamW opt(c);
    Tensor t = Tensor::full({3}, 2.0);
    t.requires_grad = true;
    t.grad.assign(3, 0.0);
    std::vector<NamedParam> params = {{"w", &t, true}};
    opt.step(params, 0.05);
    for (double v : t.values) CHECK(v == 2.0);  // zero grad, zero decay

    TrainConfig cd;
    cd.weight_decay = 0.1;
    AdamW opt2(cd);
    Tensor u = Tensor::full({2}, 1.0);
    u.grad.assign(2, 0.0);
    std::vector<NamedParam> p2 = {{"w", &u, true}};
    opt2.step(p2, 0.05);
    for (double v : u.values) CHECK(v == doctest::Approx(1.0 * (1.0 - 0.05 * 0.1)).epsilon(1e-15));

    // gains are exempt from decay
    Tensor gain = Tensor::full({2}, 1.0);
    gain.grad.assign(2, 0.0);
    std::vector<NamedParam> p3 = {{"g", &gain, false}};
    opt2.step(p3, 0.05);
    for (double v : gain.values) CHECK(v == 1.0);
}

TEST_CASE("adamw minimizes a scalar quadratic") {
    TrainConfig c;
    c.weight_decay = 0.0;
    AdamW opt(c);
    Tensor theta({1}, {3.0});
    std::vector<NamedParam> params = {{"theta", &theta, true}};
    for (int step = 0; step < 500; ++step) {
        theta.grad.assign(1, 2.0 * theta.values[0]);
        opt.step(params, 0.1);
    }
    CHECK(std::abs(theta.values[0]) < 1e-3);
}

TEST_CASE("gradient clipping") {
    Tensor a({2}, {0.3, 0.4});
    a.grad = {0.3, 0.4};  // norm 0.5
    std::vector<NamedParam> params = {{"a", &a, true}};
    CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(a.grad[0] == 0.3);

    Tensor b({2}, {0.0, 0.0});
    b.grad = {0.0, 4.0};
    std::vector<NamedParam> p2 = {{"b", &b, true}};
    CHECK(clip_grad_norm(p2, 1.0) == doctest::Approx(4.0));
    double post = std::sqrt(b.grad[0] * b.grad[0] + b.grad[1] * b.grad[1]);
    CHECK(std::abs(post - 1.0) <= 1e-12);
    CHECK(b.grad[1] > 0.0);  // direction preserved

    Tensor c({1}, {0.0});
    c.grad = {std::nan("")};
    std::vector<NamedParam> p3 = {{"broken_param", &c, true}};
    CHECK_THROWS_WITH_AS(clip_grad_norm(p3, 1.0), doctest::Contains("broken_param"), std::runtime_error);
}

TEST_CASE("byte tokenizer round trip") {
    std::string text = "abc";
    auto ids = tokenize_bytes(text);
    CHECK(ids == std::vector<int32_t>{97, 98, 99});
    CHECK(detokenize(ids) == text);

    std::string all;
    for (int i = 0; i < 256; ++i) all.push_back(static_cast<char>(i));
    CHECK(detokenize(tokenize_bytes(all)) == all);
}

TEST_CASE("batcher determinism and coverage") {
    std::vector<uint8_t> bytes(1024);
    for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<uint8_t>(i * 7);
    CorpusBatcher b1(bytes, 16, 4, 99);
    CorpusBatcher b2(bytes, 16, 4, 99);
    for (int64_t step = 1; step <= 40; ++step) {
        CHECK(b1.batch(step) == b2.batch(step));
    }
    CorpusBatcher b3(bytes, 16, 4, 100);
    bool differs = false;
    for (int64_t step = 1; step <= 8 && !differs; ++step) differs = b1.batch(step) != b3.batch(step);
    CHECK(differs);

    // each epoch visits every chunk exactly once
    int64_t bpe = b1.batches_per_epoch();
    std::vector<int> seen(b1.num_chunks(), 0);
    for (int64_t step = 1; step <= bpe; ++step) {
        for (const auto& seq : b1.batch(step)) {
            int64_t chunk = -1;
            for (int64_t c = 0; c < b1.num_chunks(); ++c) {
                if (static_cast<uint8_t>(seq[0]) == bytes[c * 16] && static_cast<uint8_t>(seq[1]) == bytes[c * 16 + 1]) {
                    bool all = true;
                    for (int64_t i = 0; i < 16; ++i) all = all && static_cast<uint8_t>(seq[i]) == bytes[c * 16 + i];
                    if (all && seen[c] == 0) {
                        chunk = c;
                        break;
                    }
                }
            }
            REQUIRE(chunk >= 0);
            seen[chunk] += 1;
        }
    }
    for (int v : seen) CHECK(v == 1);
}

TEST_CASE("corpus too small is rejected") {
    std::vector<uint8_t> bytes(30, 1);
    CHECK_THROWS_WITH_AS(CorpusBatcher(bytes, 16, 4, 0), doctest::Contains("corpus too small"),
                         std::runtime_error);
    CHECK_THROWS_AS(read_file_bytes("/nonexistent/corpus.txt"), std::runtime_error);
}

TEST_CASE("run config parsing is fail-closed") {
    std::string good =
        "[model]\n"
        "vocab_size = 256\n"
        "hidden_dim = 32\n"
        "num_layers = 2\n"
        "num_q_heads = 2\n"
        "num_kv_heads = 1\n"
        "head_dim = 16\n"
        "[objective]\n"
        "lambda = 0.5\n"
        "[train]\n"
        "total_steps = 10\n"
        "warmup_steps = 2\n"
        "seq_len = 8\n"
        "[run]\n"
        "corpus = corpus.txt\n"
        "out_dir = out\n";
    RunConfig rc = run_config_from_sections(parse_ini(good));
    CHECK(rc.model.hidden_dim == 32);
    CHECK(rc.objective.lambda == 0.5);
    CHECK(rc.train.total_steps == 10);

    CHECK_THROWS_WITH_AS(run_config_from_sections(parse_ini(good + "typo_key = 3\n")),
                         doctest::Contains("unknown key"), std::runtime_error);
    CHECK_THROWS_WITH_AS(run_config_from_sections(parse_ini(good + "[bogus]\nx = 1\n")),
                         doctest::Contains("unknown section"), std::runtime_error);

    // cross-field validation: seq_len beyond the context window
    std::string bad = good;
    bad.replace(bad.find("seq_len = 8"), 11, "seq_len = 9999");
    CHECK_THROWS_AS(run_config_from_sections(parse_ini(bad)), std::runtime_error);
}

TEST_CASE("duplicate keys and malformed lines are rejected") {
    CHECK_THROWS_AS(parse_ini("[a]\nx = 1\nx = 2\n"), std::runtime_error);
    CHECK_THROWS_AS(parse_ini("x = 1\n"), std::runtime_error);
    CHECK_THROWS_AS(parse_ini("[a]\nnot a pair\n"), std::runtime_error);
    IniSections s = parse_ini("# comment\n[a]\nx = 1\n; another\n\n");
    CHECK(s.at("a").at("x") == "1");
}

TEST_CASE("arch config loading") {
    std::filesystem::path tmp = std::filesystem::temp_directory_path() / "nitp_test_arch.cfg";
    {
        std::ofstream f(tmp);
        f << "[arch]\nd = 1280\nnum_layers = 24\nvocab_size = 152064\nffn_kind = moe\n"
             "activated_experts = 9\nexpert_ffn_dim = 640\n";
    }
    ArchSpec a = load_arch_config(tmp);
    CHECK(a.d == 1280);
    CHECK(a.k == 9);
    CHECK_FALSE(a.dense);
    std::filesystem::remove(tmp);
}
