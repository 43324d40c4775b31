// Acceptance suite: one self-contained check per release criterion, each
// printed as a single PASS/FAIL line. Oracles here are independent raw-loop
// implementations, not the library's own kernels.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "powerformer/cli.hpp"
#include "powerformer/config.hpp"
#include "powerformer/data.hpp"
#include "powerformer/model.hpp"
#include "powerformer/train.hpp"

using namespace powerformer;

namespace {

struct Runner {
  int failures = 0;

  void criterion(int number, const std::string& title,
                 const std::function<std::pair<bool, std::string>()>& check) {
    bool ok = false;
    std::string detail;
    try {
      auto [passed, info] = check();
      ok = passed;
      detail = info;
    } catch (const std::exception& e) {
      ok = false;
      detail = std::string("exception: ") + e.what();
    }
    if (!ok) ++failures;
    std::printf("%s criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", number, title.c_str(),
                detail.empty() ? "" : " -- ", detail.c_str());
    std::fflush(stdout);
  }
};

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// ---- independent oracles ---------------------------------------------------

double fd_loss(const std::function<Tensor()>& loss, Tensor& leaf, std::size_t idx,
               double h = 1e-5) {
  const double saved = leaf.data()[idx];
  leaf.data()[idx] = saved + h;
  const double up = loss().data()[0];
  leaf.data()[idx] = saved - h;
  const double down = loss().data()[0];
  leaf.data()[idx] = saved;
  return (up - down) / (2.0 * h);
}

double grad_check(const std::function<Tensor()>& loss, std::vector<Tensor*> leaves,
                  std::size_t samples, Rng& rng) {
  Gradients grads;
  {
    Tape tape;
    for (Tensor* leaf : leaves) tape.watch(*leaf);
    grads = tape.backward(loss());
  }
  double worst = 0.0;
  for (Tensor* leaf : leaves) {
    Tensor analytic = grads.wrt(*leaf);
    for (std::size_t s = 0; s < samples; ++s) {
      const std::size_t idx = rng.index(leaf->size());
      const double fd = fd_loss(loss, *leaf, idx);
      const double a = analytic.data()[idx];
      worst = std::max(worst,
                       std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-3}));
    }
  }
  return worst;
}

// masked-dense attention restricted to explicit pools, raw loops only
std::vector<double> masked_dense_oracle(const Tensor& q, const Tensor& k, const Tensor& v,
                                        std::size_t b,
                                        const std::vector<std::vector<std::size_t>>& pools) {
  const std::size_t len = q.shape()[1], dk = q.shape()[2], dv = v.shape()[2];
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> out(len * dv, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    double mx = -1e300;
    std::vector<double> scores;
    for (std::size_t j : pools[i]) {
      double s = 0;
      for (std::size_t d = 0; d < dk; ++d) s += q.at({b, i, d}) * k.at({b, j, d});
      scores.push_back(s * scale);
      mx = std::max(mx, s * scale);
    }
    double denom = 0;
    for (double& s : scores) {
      s = std::exp(s - mx);
      denom += s;
    }
    for (std::size_t p = 0; p < pools[i].size(); ++p)
      for (std::size_t d = 0; d < dv; ++d)
        out[i * dv + d] += scores[p] / denom * v.at({b, pools[i][p], d});
  }
  return out;
}

std::vector<double> naive_dct_oracle(const std::vector<double>& v) {
  const std::size_t n = v.size();
  const double pi = 3.14159265358979323846;
  std::vector<double> out(n, 0.0);
  for (std::size_t l = 0; l < n; ++l) {
    double acc = 0;
    for (std::size_t t = 0; t < n; ++t)
      acc += v[t] * std::cos(pi * (t + 0.5) * l / static_cast<double>(n));
    out[l] = (l == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n)) * acc;
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

ModelConfig toy_config() {
  ModelConfig c;
  c.seq_len = 32;
  c.pred_len = 8;
  c.n_channels = 4;
  c.d_model = 16;
  c.d_h = 8;
  c.n_layers = 2;
  c.n_buckets = 2;
  c.lsh_rounds = 2;
  c.chunk = 4;
  c.seed = 7;
  return c;
}

}  // namespace

int main() {
  setenv("POWERFORMER_LOG", "quiet", 1);
  Runner runner;
  namespace fs = std::filesystem;
  const fs::path work = fs::temp_directory_path() / "powerformer_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  // 1 -----------------------------------------------------------------------
  runner.criterion(1, "gradient suite: ops < 1e-4, toy model < 1e-3, under 60 s", [&] {
    const double t0 = now_seconds();
    Rng rng(100);
    double worst_op = 0.0;

    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t m = 2 + rng.index(3), n = 2 + rng.index(3);
      Tensor a = Tensor::randn({m, n}, rng);
      Tensor b = Tensor::randn({m, n}, rng);
      Tensor w = Tensor::randn({n, 4}, rng);
      Tensor gamma = Tensor::randn({n}, rng);
      Tensor beta = Tensor::randn({n}, rng);

      auto track = [&](const std::function<Tensor()>& loss, std::vector<Tensor*> leaves) {
        worst_op = std::max(worst_op, grad_check(loss, std::move(leaves), 3, rng));
      };
      track([&] { return sum(mul(add(a, b), sub(a, b))); }, {&a, &b});
      track([&] { return sum(matmul(sigmoid(a), w)); }, {&a, &w});
      track([&] { return sum(mul(tanh(a), relu(b))); }, {&a, &b});
      track([&] { return sum(mul(softmax(a, 1), b)); }, {&a});
      track([&] { return sum(mul(layer_norm(a, gamma, beta, 1, 1e-5), b)); },
            {&a, &gamma, &beta});
      track([&] { return mean(mul(transpose_axes(a, {1, 0}), transpose_axes(b, {1, 0}))); },
            {&a, &b});
      track([&] { return sum(slice(concat({a, b}, 0), 0, 1, m)); }, {&a, &b});
      track([&] { return sum(mul(reshape(a, {n, m}), reshape(b, {n, m}))); }, {&a});
      track([&] { return sum(mean(mul(a, b), 0)); }, {&a, &b});
      track([&] { return sum(index_select(a, 1, {0, n - 1, 0})); }, {&a});

      Tensor q = Tensor::randn({1, 4, 3}, rng);
      Tensor kk = q.clone();
      Tensor v = Tensor::randn({1, 4, 2}, rng);
      track([&] { return sum(dense_attention(q, kk, v)); }, {&q, &v});
      track([&] { return sum(lsh_attention(q, kk, v, 2, 2, 5)); }, {&q, &v});

      Tensor x3 = Tensor::randn({1, 4, 3}, rng);
      Tensor w1 = Tensor::randn({3, 6}, rng);
      Tensor b1 = Tensor::randn({6}, rng);
      Tensor w2 = Tensor::randn({6, 3}, rng);
      Tensor b2 = Tensor::randn({3}, rng);
      track([&] { return sum(chunked_ffn(x3, 2, w1, b1, w2, b2)); },
            {&x3, &w1, &b1, &w2, &b2});

      LstmParams lp = LstmParams::init(3, 4, rng);
      Tensor xs = Tensor::randn({2, 4, 3}, rng);
      track([&] { return sum(lstm_sequence(xs, lp)); }, {&xs, &lp.w_forget, &lp.b_cell});

      FecamParams fp = FecamParams::init(6, 4, rng);
      DctBasis basis = DctBasis::make(6);
      Tensor xf = Tensor::randn({1, 2, 6}, rng);
      track([&] { return sum(fecam_apply(xf, fp, basis)); }, {&xf, &fp.w1, &fp.w2});
    }
    if (worst_op >= 1e-4)
      return std::make_pair(false, detail::str("op rel err ", worst_op));

    // end-to-end toy model
    Model model(toy_config());
    Rng xrng(101);
    Tensor x = Tensor::randn({1, 32, 4}, xrng);
    Tensor y = Tensor::randn({1, 8}, xrng);
    auto loss = [&] {
      Tensor diff = sub(model.head(model.encode(model.embed(x))), y);
      return mean(mul(diff, diff));
    };
    std::vector<Tensor*> leaves{&x};
    for (auto& [name, p] : model.parameters()) leaves.push_back(p);
    const double worst_model = grad_check(loss, leaves, 2, xrng);
    const double elapsed = now_seconds() - t0;
    const bool ok = worst_model < 1e-3 && elapsed < 60.0;
    return std::make_pair(ok, detail::str("op rel err ", worst_op, ", model rel err ",
                                          worst_model, ", ", elapsed, " s"));
  });

  // 2 -----------------------------------------------------------------------
  runner.criterion(2, "reversibility: ||inverse(forward(s)) - s||_inf <= 1e-10, 100 trials", [&] {
    Rng init(200);
    AttentionSettings attn;
    attn.n_buckets = 2;
    attn.n_rounds = 2;
    attn.seed = 9;
    RevBlock block(8, 32, 4, attn, init);  // real attention + chunked FFN, d_model 16
    Rng rng(201);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      RevBlockState s{Tensor::randn({1, 8, 8}, rng), Tensor::randn({1, 8, 8}, rng)};
      RevBlockState back = block.inverse(block.forward(s));
      for (std::size_t i = 0; i < s.x1.size(); ++i) {
        worst = std::max(worst, std::fabs(back.x1.data()[i] - s.x1.data()[i]));
        worst = std::max(worst, std::fabs(back.x2.data()[i] - s.x2.data()[i]));
      }
    }
    return std::make_pair(worst <= 1e-10, detail::str("max error ", worst));
  });

  // 3 -----------------------------------------------------------------------
  runner.criterion(3, "lsh attention matches the masked-dense pool oracle", [&] {
    Rng rng(300);
    double worst_pool = 0.0;
    for (std::size_t len = 2; len <= 16; ++len) {
      Tensor q = Tensor::randn({2, len, 4}, rng);
      Tensor k = q.clone();
      Tensor v = Tensor::randn({2, len, 3}, rng);
      Tensor out = lsh_attention(q, k, v, 4, 2, 33);
      for (std::size_t b = 0; b < 2; ++b) {
        Tensor kb = reshape(slice(k, 0, b, 1), {len, 4});
        BucketAssignment assignment = lsh_hash(kb, 4, 2, 33);
        std::vector<std::vector<std::size_t>> pools;
        for (std::size_t i = 0; i < len; ++i)
          pools.push_back(multi_round_pool(assignment, i));
        auto oracle = masked_dense_oracle(q, k, v, b, pools);
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t d = 0; d < 3; ++d)
            worst_pool = std::max(
                worst_pool, std::fabs(out.at({b, i, d}) - oracle[i * 3 + d]));
      }
    }

    double worst_degenerate = 0.0;
    for (std::size_t len : {3, 8, 16}) {
      Tensor q = Tensor::randn({1, len, 4}, rng);
      Tensor k = Tensor::randn({1, len, 4}, rng);
      Tensor v = Tensor::randn({1, len, 4}, rng);
      Tensor dense = dense_attention(q, k, v);
      Tensor single = lsh_attention(q, k, v, 1, 1, 0);
      for (std::size_t i = 0; i < dense.size(); ++i)
        worst_degenerate =
            std::max(worst_degenerate, std::fabs(dense.data()[i] - single.data()[i]));
    }
    const bool ok = worst_pool <= 1e-10 && worst_degenerate <= 1e-12;
    return std::make_pair(ok, detail::str("pool err ", worst_pool, ", degenerate err ",
                                          worst_degenerate));
  });

  // 4 -----------------------------------------------------------------------
  runner.criterion(4, "dct suite: orthonormal, parseval, naive-sum oracle (L=8,64,128)", [&] {
    Rng rng(400);
    double worst = 0.0;
    for (std::size_t len : {8, 64, 128}) {
      DctBasis basis = DctBasis::make(len);
      Tensor gram = matmul(basis.matrix, transpose_last(basis.matrix));
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t j = 0; j < len; ++j)
          worst = std::max(worst, std::fabs(gram.at({i, j}) - (i == j ? 1.0 : 0.0)));

      Tensor v = Tensor::randn({1, len}, rng);
      Tensor freq = dct_channel(v, basis);
      std::vector<double> raw(v.data(), v.data() + len);
      auto oracle = naive_dct_oracle(raw);
      double energy_in = 0, energy_out = 0;
      for (std::size_t l = 0; l < len; ++l) {
        worst = std::max(worst, std::fabs(freq.at({0, l}) - oracle[l]));
        energy_in += raw[l] * raw[l];
        energy_out += freq.at({0, l}) * freq.at({0, l});
      }
      worst = std::max(worst, std::fabs(energy_in - energy_out));
    }
    return std::make_pair(worst <= 1e-10, detail::str("max deviation ", worst));
  });

  // 5 -----------------------------------------------------------------------
  runner.criterion(5, "metric oracle agreement to 1e-12 and mape exclusions", [&] {
    Rng rng(500);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 1 + rng.index(50);
      std::vector<double> y(n), p(n);
      for (std::size_t i = 0; i < n; ++i) {
        y[i] = rng.gaussian() * 5;
        p[i] = rng.gaussian() * 5;
      }
      Metrics m = compute_metrics(y, p);
      double omse = 0, omae = 0, omape = 0;
      std::size_t used = 0;
      for (std::size_t i = 0; i < n; ++i) {
        omse += (y[i] - p[i]) * (y[i] - p[i]);
        omae += std::fabs(y[i] - p[i]);
        if (std::fabs(y[i]) >= 1e-6) {
          omape += std::fabs((y[i] - p[i]) / y[i]);
          ++used;
        }
      }
      omse /= n;
      omae /= n;
      omape = used ? 100.0 * omape / used : 0.0;
      worst = std::max({worst, std::fabs(m.mse - omse), std::fabs(m.mae - omae)});
      worst = std::max(worst, std::fabs(m.mape - omape) / std::max(1.0, omape));
    }
    Metrics fixture = compute_metrics({0.0, 2.0, 0.0, 4.0, 1e-9}, {1.0, 1.0, 5.0, 5.0, 3.0});
    const bool ok = worst <= 1e-12 && fixture.mape_excluded == 3;
    return std::make_pair(ok, detail::str("max err ", worst, ", excluded ",
                                          fixture.mape_excluded, "/3"));
  });

  // 6 -----------------------------------------------------------------------
  runner.criterion(6, "efficiency: (C/T)^2 counter ratio, reversible memory, chunk invariance", [&] {
    // (a) exact (C/T)^2 at T=288, C=16 with dense attention
    ModelConfig mc;
    mc.seq_len = 288;
    mc.pred_len = 8;
    mc.n_channels = 4;
    mc.d_model = 16;
    mc.d_h = 16;
    mc.n_layers = 2;
    mc.attention = AttentionKind::kDense;
    mc.chunk = 32;
    mc.seed = 5;
    Rng xrng(600);
    Tensor x = Tensor::randn({2, 288, 4}, xrng);

    Model variate(mc);
    attention_cost::reset();
    variate.forward(x);
    const std::uint64_t entries_variate = attention_cost::score_entries();
    const std::uint64_t tokens_variate = attention_cost::token_count();

    mc.use_transpose = false;
    Model time_tokens(mc);
    attention_cost::reset();
    time_tokens.forward(x);
    const std::uint64_t entries_time = attention_cost::score_entries();
    const std::uint64_t tokens_time = attention_cost::token_count();

    const bool ratio_exact =
        tokens_variate == 16 && tokens_time == 288 &&
        entries_variate * 288ull * 288ull == entries_time * 16ull * 16ull;

    // (b) reconstruction vs stored peak bytes at N=4 layers
    ModelConfig deep = toy_config();
    deep.n_layers = 4;
    Model stored_model(deep);
    Model recon_model(deep);
    Rng yrng(601);
    Tensor xd = Tensor::randn({4, 32, 4}, yrng);
    Tensor yd = Tensor::randn({4, 8}, yrng);
    memstat::reset_peak();
    const std::uint64_t base_stored = memstat::live_bytes();
    stored_model.loss_and_gradients(xd, yd, BackpropMode::kStored);
    const std::uint64_t peak_stored = memstat::peak_bytes() - base_stored;
    memstat::reset_peak();
    const std::uint64_t base_recon = memstat::live_bytes();
    recon_model.loss_and_gradients(xd, yd, BackpropMode::kReconstruct);
    const std::uint64_t peak_recon = memstat::peak_bytes() - base_recon;
    const bool memory_ok = peak_recon < peak_stored;

    // (c) chunked FFN bit-identical across chunk sizes
    Rng crng(602);
    Tensor cx = Tensor::randn({2, 8, 5}, crng);
    Tensor w1 = Tensor::randn({5, 20}, crng);
    Tensor b1 = Tensor::randn({20}, crng);
    Tensor w2 = Tensor::randn({20, 5}, crng);
    Tensor b2 = Tensor::randn({5}, crng);
    Tensor whole = chunked_ffn(cx, 8, w1, b1, w2, b2);
    bool chunk_ok = true;
    for (std::size_t chunk : {1, 2, 3, 5, 7}) {
      Tensor split = chunked_ffn(cx, chunk, w1, b1, w2, b2);
      for (std::size_t i = 0; i < whole.size(); ++i)
        chunk_ok = chunk_ok && split.data()[i] == whole.data()[i];
    }

    const bool ok = ratio_exact && memory_ok && chunk_ok;
    return std::make_pair(
        ok, detail::str("entries ", entries_variate, "/", entries_time,
                        " (exact ratio: ", ratio_exact ? "yes" : "no",
                        "), peak bytes recon ", peak_recon, " < stored ", peak_stored,
                        ": ", memory_ok ? "yes" : "no",
                        ", chunk bit-identical: ", chunk_ok ? "yes" : "no"));
  });

  // 7 -----------------------------------------------------------------------
  runner.criterion(7, "forecast gate: full model beats 0.8x persistence on synthetic wind", [&] {
    const double t0 = now_seconds();
    SeriesFrame frame = synth_wind(1234, 8000, 4);
    const Schema schema = Schema::synthetic(4);

    DatasetOptions dopts;
    dopts.input_len = 96;
    dopts.pred_len = 96;
    dopts.stride = 8;
    dopts.batch_size = 32;

    // persistence on the identical normalized test windows
    SeriesFrame cleaned = frame;
    clean(cleaned, schema.target_column);
    const SplitFrames splits = split_7_1_2(cleaned);
    FeatureMatrix train_features = build_features(splits.train, schema, dopts.features);
    FeatureMatrix test_features = build_features(splits.test, schema, dopts.features);
    Normalizer norm;
    norm.fit(train_features);
    const Metrics persistence =
        persistence_baseline(norm.transform(test_features), 96, 96, 8);

    Dataset ds = prepare_dataset(frame, schema, dopts);
    ModelConfig mc;
    mc.seq_len = 96;
    mc.pred_len = 96;
    mc.n_channels = ds.n_channels;
    mc.d_model = 32;
    mc.d_h = 16;
    mc.n_layers = 2;
    mc.n_buckets = 4;
    mc.lsh_rounds = 2;
    mc.chunk = 16;
    mc.seed = 11;
    Model model(mc);  // row V: all three components on

    TrainOptions topts;
    topts.epochs = 5;
    topts.patience = 5;
    topts.learning_rate = 1e-3;
    TrainReport report = train(model, ds, topts);

    const double elapsed = now_seconds() - t0;
    const bool ok = !report.diverged &&
                    report.test_normalized.mse <= 0.8 * persistence.mse &&
                    elapsed < 900.0;
    return std::make_pair(ok, detail::str("model mse ", report.test_normalized.mse,
                                          " vs 0.8 x persistence ",
                                          0.8 * persistence.mse, ", ", elapsed, " s"));
  });

  // 8 -----------------------------------------------------------------------
  runner.criterion(8, "ablation table: rows I-V, finite metrics, row I costs above row V", [&] {
    const fs::path dir = work / "ablation";
    fs::create_directories(dir);
    write_csv(synth_wind(77, 1600, 4), (dir / "wind.csv").string());
    {
      std::ofstream cfg(dir / "cfg.json");
      cfg << R"({
        "model": {"seq_len": 48, "pred_len": 24, "d_model": 16, "d_h": 8,
                  "n_layers": 1, "n_buckets": 2, "lsh_rounds": 2, "chunk": 8, "seed": 3},
        "train": {"epochs": 2, "learning_rate": 0.001, "patience": 2},
        "data": {"stride": 6, "batch_size": 16}
      })";
    }
    cli::TrainArgs args;
    args.config_path = (dir / "cfg.json").string();
    args.data_path = (dir / "wind.csv").string();
    args.out_dir = (dir / "out").string();
    if (cli::cmd_ablate(args) != cli::kOk)
      return std::make_pair(false, std::string("cmd_ablate returned nonzero"));

    std::ifstream table(dir / "out" / "ablation.csv");
    std::string line;
    std::getline(table, line);  // header
    struct Row {
      std::string id, flags;
      double mse, mae, mape;
      std::uint64_t peak, entries;
    };
    std::vector<Row> rows;
    while (std::getline(table, line)) {
      if (line.empty()) continue;
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ss(line);
      Row r;
      std::string t, f, l;
      double seconds;
      ss >> r.id >> t >> f >> l >> r.mse >> r.mae >> r.mape >> seconds >> r.peak >>
          r.entries;
      r.flags = t + f + l;
      rows.push_back(r);
    }
    if (rows.size() != 5)
      return std::make_pair(false, detail::str("expected 5 rows, got ", rows.size()));
    const std::vector<std::string> want_ids{"I", "II", "III", "IV", "V"};
    const std::vector<std::string> want_flags{"000", "110", "101", "011", "111"};
    bool shape_ok = true, finite_ok = true;
    for (std::size_t i = 0; i < 5; ++i) {
      shape_ok = shape_ok && rows[i].id == want_ids[i] && rows[i].flags == want_flags[i];
      finite_ok = finite_ok && std::isfinite(rows[i].mse) && std::isfinite(rows[i].mae) &&
                  std::isfinite(rows[i].mape);
    }
    const bool ordering_ok =
        rows[0].entries > rows[4].entries && rows[0].peak > rows[4].peak;
    const bool ok = shape_ok && finite_ok && ordering_ok;
    return std::make_pair(
        ok, detail::str("flag matrix ", shape_ok ? "exact" : "WRONG", ", metrics ",
                        finite_ok ? "finite" : "NON-FINITE", ", row I entries ",
                        rows[0].entries, " > row V ", rows[4].entries, " and peak ",
                        rows[0].peak, " > ", rows[4].peak, ": ",
                        ordering_ok ? "yes" : "no"));
  });

  // 9 -----------------------------------------------------------------------
  runner.criterion(9, "reproducibility: identical manifests give byte-identical reports", [&] {
    const fs::path dir = work / "repro";
    fs::create_directories(dir);
    write_csv(synth_wind(55, 1200, 4), (dir / "wind.csv").string());
    {
      std::ofstream cfg(dir / "cfg.json");
      cfg << R"({
        "model": {"seq_len": 24, "pred_len": 12, "d_model": 16, "d_h": 8,
                  "n_layers": 1, "n_buckets": 2, "lsh_rounds": 2, "chunk": 8, "seed": 3},
        "train": {"epochs": 2, "learning_rate": 0.001, "patience": 2},
        "data": {"stride": 4, "batch_size": 16}
      })";
    }
    cli::TrainArgs first;
    first.config_path = (dir / "cfg.json").string();
    first.data_path = (dir / "wind.csv").string();
    first.out_dir = (dir / "a").string();
    cli::TrainArgs second = first;
    second.out_dir = (dir / "b").string();
    if (cli::cmd_train(first) != cli::kOk || cli::cmd_train(second) != cli::kOk)
      return std::make_pair(false, std::string("cmd_train returned nonzero"));

    const bool report_same = read_file((dir / "a" / "report.txt").string()) ==
                             read_file((dir / "b" / "report.txt").string());
    const bool manifest_same = read_file((dir / "a" / "manifest.json").string()) ==
                               read_file((dir / "b" / "manifest.json").string());
    const bool checkpoint_same = read_file((dir / "a" / "checkpoint.json").string()) ==
                                 read_file((dir / "b" / "checkpoint.json").string());
    const bool ok = report_same && manifest_same && checkpoint_same;
    return std::make_pair(ok, detail::str("report ", report_same ? "identical" : "DIFFERS",
                                          ", manifest ",
                                          manifest_same ? "identical" : "DIFFERS",
                                          ", checkpoint ",
                                          checkpoint_same ? "identical" : "DIFFERS"));
  });

  fs::remove_all(work);
  if (runner.failures == 0) {
    std::printf("all acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d acceptance criteria failed\n", runner.failures);
  return 1;
}
