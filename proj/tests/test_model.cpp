#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cpword/checkpoint.hpp"
#include "cpword/model.hpp"
#include "fixtures.hpp"

using namespace cpword;

namespace {

ModelConfig tiny_config(const Vocabulary& vocab) {
    ModelConfig cfg;
    cfg.task = vocab.task();
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ffn = 24;
    cfg.max_len = 32;
    cfg.type_embed.assign(vocab.num_slots(), 3);
    cfg.family_embed = 3;
    return cfg;
}

CpSeq fixture_cp(const Vocabulary& vocab, int song_index, std::size_t max_words) {
    const Song song = testing::fixture_corpus()[song_index];
    CpSeq cps = group_to_cp(encode_remi(song, vocab), vocab);
    if (cps.words.size() > max_words) cps.words.resize(max_words);
    return cps;
}

// Straight-line reference of the full decoder stack, kept deliberately
// separate from the library implementation: direct per-position loops and
// the explicit quadratic attention definition.
MatX<double> reference_forward(const ModelParams<double>& p, const Vocabulary& vocab,
                               const std::vector<CompoundWord>& words) {
    const int d = p.cfg.d_model;
    const int H = p.cfg.n_heads;
    const int D = d / H;
    const auto T = static_cast<Eigen::Index>(words.size());

    auto phi = [](double u) { return u >= 0.0 ? u + 1.0 : std::exp(u); };
    auto ln = [&](const MatX<double>& x, const MatX<double>& g, const MatX<double>& b) {
        MatX<double> y(x.rows(), x.cols());
        for (Eigen::Index t = 0; t < x.cols(); ++t) {
            double mean = 0.0;
            for (Eigen::Index i = 0; i < x.rows(); ++i) mean += x(i, t);
            mean /= static_cast<double>(x.rows());
            double var = 0.0;
            for (Eigen::Index i = 0; i < x.rows(); ++i) var += (x(i, t) - mean) * (x(i, t) - mean);
            var /= static_cast<double>(x.rows());
            for (Eigen::Index i = 0; i < x.rows(); ++i)
                y(i, t) = g(i, 0) * (x(i, t) - mean) / std::sqrt(var + kLayerNormEps) + b(i, 0);
        }
        return y;
    };

    MatX<double> x(d, T);
    for (Eigen::Index t = 0; t < T; ++t) {
        VecX<double> concat(p.cfg.concat_width());
        int at = 0;
        for (std::size_t k = 0; k < p.type_embed.size(); ++k) {
            const TokenType st = vocab.slot_types()[k];
            const int local = vocab.local_index(st, words[t].slot(st));
            for (Eigen::Index c = 0; c < p.type_embed[k].cols(); ++c)
                concat(at + c) = p.type_embed[k](local, c);
            at += static_cast<int>(p.type_embed[k].cols());
        }
        const int fam = vocab.family_local(words[t].family);
        for (int c = 0; c < p.cfg.family_embed; ++c) concat(at + c) = p.family_embed(fam, c);
        x.col(t) = p.w_in * concat + p.pos_embed.row(t).transpose();
    }

    for (const auto& layer : p.layers) {
        const MatX<double> y = ln(x, layer.ln1_gain, layer.ln1_bias);
        const MatX<double> q = layer.wq * y, k = layer.wk * y, v = layer.wv * y;
        MatX<double> attn(d, T);
        for (int h = 0; h < H; ++h) {
            for (Eigen::Index t = 0; t < T; ++t) {
                VecX<double> num = VecX<double>::Zero(D);
                double den = kAttentionEps;
                for (Eigen::Index s = 0; s <= t; ++s) {
                    double w = 0.0;
                    for (int i = 0; i < D; ++i) w += phi(q(h * D + i, t)) * phi(k(h * D + i, s));
                    for (int i = 0; i < D; ++i) num(i) += w * v(h * D + i, s);
                    den += w;
                }
                for (int i = 0; i < D; ++i) attn(h * D + i, t) = num(i) / den;
            }
        }
        const MatX<double> u = x + layer.wo * attn;
        const MatX<double> y2 = ln(u, layer.ln2_gain, layer.ln2_bias);
        MatX<double> f = layer.w1 * y2;
        f.colwise() += layer.b1.col(0);
        for (Eigen::Index i = 0; i < f.size(); ++i)
            f.data()[i] = 0.5 * f.data()[i] * (1.0 + std::erf(f.data()[i] / std::sqrt(2.0)));
        x = u + layer.w2 * f;
        x.colwise() += layer.b2.col(0);
    }
    return ln(x, p.lnf_gain, p.lnf_bias);
}

}  // namespace

TEST_CASE("embed_compound: zero tables give the zero vector") {
    const Vocabulary vocab(Task::Unconditional);
    ModelParams<double> params(tiny_config(vocab), vocab);
    const VecX<double> x = embed_compound(params, vocab, make_bos_word(vocab), 0);
    CHECK(x.norm() == 0.0);
    CHECK_THROWS_AS(embed_compound(params, vocab, make_bos_word(vocab), params.cfg.max_len),
                    model_error);
}

TEST_CASE("embed_compound: full-scale shapes concatenate 1251 down to 512") {
    const Vocabulary vocab(Task::Conditional);
    const ModelConfig cfg = ModelConfig::full_scale(vocab);
    CHECK(cfg.concat_width() == 1251);  // 3+128+64+256+512+128+128 + 32
    CHECK(cfg.d_model == 512);
    CHECK(cfg.n_layers == 12);
    CHECK(cfg.n_heads == 8);
    CHECK(cfg.d_ffn == 2048);

    ModelParams<float> params(cfg, vocab);
    CHECK(params.w_in.rows() == 512);
    CHECK(params.w_in.cols() == 1251);
    CHECK(params.w_type.size() + 1 == 8);  // K+1 heads for the conditional task
    const VecX<float> x = embed_compound(params, vocab, make_bos_word(vocab), 3);
    CHECK(x.size() == 512);
}

TEST_CASE("embed_compound is linear in the changed embedding row") {
    const Vocabulary vocab(Task::Unconditional);
    Rng rng(1);
    ModelParams<double> params(tiny_config(vocab), vocab);
    params.init_random(rng);

    CompoundWord a = make_ignore_word(vocab, vocab.family_id(Family::Note));
    a.slot(TokenType::Pitch) = vocab.token_id(TokenType::Pitch, 60);
    a.slot(TokenType::Duration) = vocab.token_id(TokenType::Duration, 2);
    a.slot(TokenType::Velocity) = vocab.token_id(TokenType::Velocity, 5);
    CompoundWord b = a;
    b.slot(TokenType::Pitch) = vocab.token_id(TokenType::Pitch, 72);

    const VecX<double> xa = embed_compound(params, vocab, a, 0);
    const VecX<double> xb = embed_compound(params, vocab, b, 0);

    // pitch is the 3rd slot type under the unconditional task (tempo,
    // position, chord, pitch, ...): locate its offset in the concat vector.
    int offset = 0;
    int slot = 0;
    for (TokenType t : vocab.slot_types()) {
        if (t == TokenType::Pitch) break;
        offset += params.cfg.type_embed[slot++];
    }
    const int la = vocab.local_index(TokenType::Pitch, a.slot(TokenType::Pitch));
    const int lb = vocab.local_index(TokenType::Pitch, b.slot(TokenType::Pitch));
    VecX<double> row_delta = VecX<double>::Zero(params.cfg.concat_width());
    row_delta.segment(offset, 3) =
        (params.type_embed[slot].row(lb) - params.type_embed[slot].row(la)).transpose();
    const VecX<double> expected = params.w_in * row_delta;
    CHECK((xb - xa - expected).norm() < 1e-12);
}

TEST_CASE("linear attention: single element returns its value") {
    MatX<double> phi_q(4, 1), phi_k(4, 1), v(4, 1), out, den;
    Rng rng(2);
    for (int i = 0; i < 4; ++i) {
        phi_q(i, 0) = nn::feature(rng.normal());
        phi_k(i, 0) = nn::feature(rng.normal());
        v(i, 0) = rng.normal();
    }
    nn::attention_forward(phi_q, phi_k, v, 1, out, den);
    CHECK((out.col(0) - v.col(0)).norm() < 1e-5);  // up to the epsilon floor
}

TEST_CASE("linear attention: zero features average the values") {
    // phi(0) = 1, so two steps of zero q/k average the seen values:
    // out_2 = (3+5)/2 = 4.
    MatX<double> q = MatX<double>::Zero(1, 2), k = MatX<double>::Zero(1, 2), v(1, 2);
    v << 3.0, 5.0;
    MatX<double> phi_q = q.unaryExpr([](double u) { return nn::feature(u); });
    MatX<double> phi_k = k.unaryExpr([](double u) { return nn::feature(u); });
    MatX<double> out, den;
    nn::attention_forward(phi_q, phi_k, v, 1, out, den);
    CHECK(out(0, 0) == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(out(0, 1) == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("linear attention: prefix accumulators match the quadratic definition") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        const int d = 8, H = 2, T = 16;
        MatX<double> q(d, T), k(d, T), v(d, T);
        for (Eigen::Index i = 0; i < q.size(); ++i) {
            q.data()[i] = rng.normal();
            k.data()[i] = rng.normal();
            v.data()[i] = rng.normal();
        }
        MatX<double> out, den;
        const MatX<double> phi_q = q.unaryExpr([](double u) { return nn::feature(u); });
        const MatX<double> phi_k = k.unaryExpr([](double u) { return nn::feature(u); });
        nn::attention_forward(phi_q, phi_k, v, H, out, den);
        const MatX<double> ref = nn::attention_quadratic(q, k, v, H);
        CHECK((out - ref).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("forward matches the straight-line reference implementation") {
    const Vocabulary vocab(Task::Unconditional);
    Rng rng(5);
    ModelParams<double> params(tiny_config(vocab), vocab);
    params.init_random(rng);
    const CpSeq cps = fixture_cp(vocab, 0, 32);

    ForwardCache<double> cache;
    const MatX<double> h = forward(params, vocab, cps.words, cache);
    const MatX<double> ref = reference_forward(params, vocab, cps.words);
    CHECK((h - ref).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("incremental decoding equals the full-sequence forward pass") {
    const Vocabulary vocab(Task::Unconditional);
    Rng rng(6);
    ModelParams<double> params(tiny_config(vocab), vocab);
    params.init_random(rng);
    const CpSeq cps = fixture_cp(vocab, 1, 32);

    ForwardCache<double> cache;
    const MatX<double> h = forward(params, vocab, cps.words, cache);
    StepState<double> state(params.cfg);
    for (std::size_t t = 0; t < cps.words.size(); ++t) {
        const VecX<double> ht = step_forward(params, vocab, cps.words[t], state);
        CHECK((ht - h.col(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("causality: perturbing position t leaves earlier hidden states unchanged") {
    const Vocabulary vocab(Task::Unconditional);
    Rng rng(7);
    ModelParams<double> params(tiny_config(vocab), vocab);
    params.init_random(rng);
    CpSeq cps = fixture_cp(vocab, 2, 24);
    REQUIRE(cps.words.size() >= 10);

    ForwardCache<double> cache;
    const MatX<double> h = forward(params, vocab, cps.words, cache);

    const std::size_t t = 6;
    CompoundWord w = make_ignore_word(vocab, vocab.family_id(Family::Note));
    w.slot(TokenType::Pitch) = vocab.token_id(TokenType::Pitch, 99);
    w.slot(TokenType::Duration) = vocab.token_id(TokenType::Duration, 9);
    w.slot(TokenType::Velocity) = vocab.token_id(TokenType::Velocity, 9);
    cps.words[t] = w;
    ForwardCache<double> cache2;
    const MatX<double> h2 = forward(params, vocab, cps.words, cache2);

    for (std::size_t s = 0; s < t; ++s)
        CHECK((h.col(s) - h2.col(s)).norm() == 0.0);
    CHECK((h.col(t) - h2.col(t)).norm() > 0.0);
}

TEST_CASE("zero residual branches reduce to a normalized embedding stream") {
    const Vocabulary vocab(Task::Unconditional);
    Rng rng(8);
    ModelParams<double> params(tiny_config(vocab), vocab);
    params.init_random(rng);
    for (auto& l : params.layers) {
        l.wo.setZero();
        l.w2.setZero();
        l.b2.setZero();
    }
    const CpSeq cps = fixture_cp(vocab, 3, 16);

    ForwardCache<double> cache;
    const MatX<double> h = forward(params, vocab, cps.words, cache);

    MatX<double> expected, xhat;
    RowX<double> rstd;
    nn::layer_norm(cache.x0, params.lnf_gain, params.lnf_bias, expected, xhat, rstd);
    CHECK((h - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two-stage heads: zero family head gives uniform family probabilities") {
    const Vocabulary vocab(Task::Unconditional);
    Rng rng(9);
    ModelParams<double> params(tiny_config(vocab), vocab);
    params.init_random(rng);
    params.w_family.setZero();
    const VecX<double> h = VecX<double>::Random(params.cfg.d_model);
    const VecX<double> logits = family_logits(params, h);
    CHECK(logits.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-stage heads: family conditioning is linear in the embedding row") {
    const Vocabulary vocab(Task::Unconditional);
    Rng rng(10);
    ModelParams<double> params(tiny_config(vocab), vocab);
    params.init_random(rng);
    const VecX<double> h = VecX<double>::Random(params.cfg.d_model);

    const int fam_note = static_cast<int>(Family::Note);
    const int fam_metric = static_cast<int>(Family::Metric);
    const VecX<double> a = conditioned_hidden(params, h, fam_note);
    const VecX<double> b = conditioned_hidden(params, h, fam_metric);

    VecX<double> delta = VecX<double>::Zero(params.cfg.d_model + params.cfg.family_embed);
    delta.tail(params.cfg.family_embed) =
        (params.family_embed.row(fam_metric) - params.family_embed.row(fam_note)).transpose();
    CHECK((b - a - params.w_out * delta).norm() < 1e-12);
}

TEST_CASE("loss: zero parameters give log(class count) per head") {
    const Vocabulary vocab(Task::Unconditional);
    ModelParams<double> params(tiny_config(vocab), vocab);
    params.set_zero();  // uniform logits everywhere
    const CpSeq cps = fixture_cp(vocab, 0, 20);

    const CpSeq* batch[] = {&cps};
    const LossStats stats = batch_loss<double>(params, vocab, batch, nullptr);

    CHECK(stats.per_head[0] == doctest::Approx(std::log(5.0)).epsilon(1e-12));  // families + BOS
    for (int k = 0; k < vocab.num_slots(); ++k) {
        const TokenType t = vocab.slot_types()[k];
        CHECK(stats.per_head[k + 1] ==
              doctest::Approx(std::log(static_cast<double>(vocab.local_count(t)))).epsilon(1e-12));
    }
    // pitch head: 86 values + [ignore] = 87 classes
    CHECK(stats.per_head[4] == doctest::Approx(std::log(87.0)).epsilon(1e-12));

    // total equals the mean of the per-head values
    double mean = 0.0;
    for (double v : stats.per_head) mean += v;
    mean /= static_cast<double>(stats.per_head.size());
    CHECK(stats.total == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("loss approaches zero under perfect one-hot logits") {
    const Vocabulary vocab(Task::Unconditional);
    ModelParams<double> params(tiny_config(vocab), vocab);
    params.set_zero();

    CpSeq cps;
    cps.task = Task::Unconditional;
    cps.words.push_back(make_bos_word(vocab));
    cps.words.push_back(make_eos_word(vocab));

    // Freeze h to a constant unit vector, then put a large margin on every
    // target class.
    params.lnf_bias(0, 0) = 1.0;
    const WordTargets target = word_targets(cps.words[1], vocab);
    params.w_family(target.family, 0) = 50.0;
    params.w_out(0, 0) = 50.0;  // h_out = 50 * e1
    for (int k = 0; k < vocab.num_slots(); ++k) params.w_type[k](target.slots[k], 0) = 1.0;

    const CpSeq* batch[] = {&cps};
    const LossStats stats = batch_loss<double>(params, vocab, batch, nullptr);
    CHECK(stats.total < 1e-6);
}

TEST_CASE("analytic gradients match central finite differences for every group") {
    const Vocabulary vocab(Task::Unconditional);
    Rng rng(11);
    ModelParams<double> params(tiny_config(vocab), vocab);
    params.init_random(rng);
    const CpSeq cps = fixture_cp(vocab, 0, 14);
    const CpSeq* batch[] = {&cps};

    ModelParams<double> grads(params.cfg, vocab);
    grads.set_zero();
    batch_loss<double>(params, vocab, batch, &grads);

    auto loss_at = [&]() { return batch_loss<double>(params, vocab, batch, nullptr).total; };

    std::vector<std::pair<std::string, MatX<double>*>> tensors, grad_tensors;
    params.visit([&](const std::string& name, MatX<double>& m) { tensors.push_back({name, &m}); });
    grads.visit([&](const std::string& name, MatX<double>& m) { grad_tensors.push_back({name, &m}); });
    REQUIRE(tensors.size() == grad_tensors.size());

    const double h = 1e-5;
    int groups_checked = 0;
    for (std::size_t g = 0; g < tensors.size(); ++g) {
        auto [name, mat] = tensors[g];
        const auto n = mat->size();
        REQUIRE(n > 0);
        double worst = 0.0;
        for (int pick = 0; pick < 5; ++pick) {
            const Eigen::Index i = n == 1 ? 0 : pick * (n - 1) / 4;
            const double saved = mat->data()[i];
            mat->data()[i] = saved + h;
            const double up = loss_at();
            mat->data()[i] = saved - h;
            const double down = loss_at();
            mat->data()[i] = saved;
            const double fd = (up - down) / (2 * h);
            const double an = grad_tensors[g].second->data()[i];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, rel);
        }
        INFO("parameter group: ", name);
        CHECK(worst < 1e-4);
        groups_checked++;
    }
    CHECK(groups_checked == static_cast<int>(tensors.size()));
}

TEST_CASE("train_step: identical seeds give bitwise-identical loss curves") {
    const Vocabulary vocab(Task::Unconditional);
    const CpSeq cps = fixture_cp(vocab, 0, 24);
    const CpSeq* batch[] = {&cps};

    auto run = [&]() {
        Rng rng(123);
        ModelParams<float> params(tiny_config(vocab), vocab);
        params.init_random(rng);
        AdamState<float> opt(params.cfg, vocab);
        ModelParams<float> scratch(params.cfg, vocab);
        std::vector<double> losses;
        for (int step = 0; step < 8; ++step)
            losses.push_back(train_step(params, vocab, batch, opt, {}, scratch).total);
        return losses;
    };
    CHECK(run() == run());
}

TEST_CASE("train_step: a few steps of Adam reduce the loss on a tiny batch") {
    const Vocabulary vocab(Task::Unconditional);
    Rng rng(77);
    ModelParams<double> params(tiny_config(vocab), vocab);
    params.init_random(rng);
    const CpSeq cps = fixture_cp(vocab, 1, 24);
    const CpSeq* batch[] = {&cps};

    AdamState<double> opt(params.cfg, vocab);
    ModelParams<double> scratch(params.cfg, vocab);
    AdamConfig cfg;
    cfg.lr = 1e-2;
    const double first = train_step(params, vocab, batch, opt, cfg, scratch).total;
    double last = first;
    for (int step = 0; step < 30; ++step) last = train_step(params, vocab, batch, opt, cfg, scratch).total;
    CHECK(last < first);
}

TEST_CASE("training loss decreases monotonically in moving average over 200 steps") {
    const Vocabulary vocab(Task::Unconditional);
    std::vector<CpSeq> corpus;
    ModelConfig cfg = tiny_config(vocab);
    cfg.max_len = 128;
    for (int i = 0; i < 4; ++i) corpus.push_back(fixture_cp(vocab, i, 128));
    std::vector<const CpSeq*> batch;
    for (const CpSeq& cps : corpus) batch.push_back(&cps);

    Rng rng(5);
    ModelParams<float> params(cfg, vocab);
    params.init_random(rng);
    AdamState<float> opt(cfg, vocab);
    ModelParams<float> scratch(cfg, vocab);
    AdamConfig adam;
    adam.lr = 1e-3;

    std::vector<double> losses;
    for (int step = 0; step < 200; ++step)
        losses.push_back(train_step(params, vocab, batch, opt, adam, scratch).total);

    const int window = 25;
    std::vector<double> ma;
    for (std::size_t i = 0; i + window <= losses.size(); ++i) {
        double sum = 0.0;
        for (int j = 0; j < window; ++j) sum += losses[i + j];
        ma.push_back(sum / window);
    }
    for (std::size_t i = 1; i < ma.size(); ++i) CHECK(ma[i] <= ma[i - 1] + 1e-9);
    CHECK(ma.back() < ma.front());
}

TEST_CASE("gradient clipping caps the global norm") {
    const Vocabulary vocab(Task::Unconditional);
    ModelParams<double> grads(tiny_config(vocab), vocab);
    grads.set_zero();
    grads.w_in.setConstant(10.0);
    CHECK(global_grad_norm(grads) == doctest::Approx(10.0 * std::sqrt(double(grads.w_in.size()))));
}

TEST_CASE("checkpoints round trip parameters, optimizer state and step") {
    const Vocabulary vocab(Task::Unconditional);
    Rng rng(13);
    ModelParams<float> params(tiny_config(vocab), vocab);
    params.init_random(rng);
    AdamState<float> opt(params.cfg, vocab);
    opt.step = 42;
    opt.m.w_in.setConstant(0.5f);

    const auto path = std::filesystem::temp_directory_path() / "cpword_test.ckpt";
    save_checkpoint(path, params, vocab, &opt);

    ModelParams<float> loaded;
    AdamState<float> opt2;
    const long long step = load_checkpoint(path, loaded, vocab, &opt2);
    CHECK(step == 42);
    CHECK(opt2.step == 42);
    CHECK(loaded.cfg == params.cfg);

    bool equal = true;
    std::vector<const MatX<float>*> a, b;
    params.visit([&](const std::string&, const MatX<float>& m) { a.push_back(&m); });
    loaded.visit([&](const std::string&, const MatX<float>& m) { b.push_back(&m); });
    for (std::size_t i = 0; i < a.size(); ++i) equal = equal && *a[i] == *b[i];
    CHECK(equal);
    CHECK(opt2.m.w_in == opt.m.w_in);

    std::filesystem::remove(path);
}

TEST_CASE("checkpoints reject a vocabulary hash mismatch") {
    const Vocabulary vocab(Task::Unconditional);
    const Vocabulary other(Task::Conditional);
    ModelParams<float> params(tiny_config(vocab), vocab);
    const auto path = std::filesystem::temp_directory_path() / "cpword_test_mismatch.ckpt";
    save_checkpoint(path, params, vocab);
    ModelParams<float> loaded;
    CHECK_THROWS_WITH_AS(load_checkpoint(path, loaded, other),
                         doctest::Contains("vocabulary hash mismatch"), model_error);
    std::filesystem::remove(path);
}

TEST_CASE("toy preset stays under the small-model parameter budget") {
    const Vocabulary vocab(Task::Unconditional);
    const ModelConfig cfg = ModelConfig::toy(vocab);
    ModelParams<float> params(cfg, vocab);
    CHECK(params.parameter_count() < 500'000);
    CHECK(cfg.d_model == 64);
    CHECK(cfg.n_layers == 2);
    CHECK(cfg.n_heads == 2);
}
