// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--report-only] [--report-file PATH]
//
// Exits 1 when any selected criterion fails, unless --report-only is given
// (then only a harness error is fatal).

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "boxformer/config.hpp"
#include "boxformer/grad_suite.hpp"
#include "boxformer/metrics.hpp"
#include "boxformer/shape_walk.hpp"
#include "boxformer/trainer.hpp"
#include "oracles.hpp"

using namespace boxformer;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool bit_identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

bool same_params(Model& x, Model& y) {
  auto px = x.all_params();
  auto py = y.all_params();
  if (px.size() != py.size()) return false;
  for (std::size_t i = 0; i < px.size(); ++i)
    if (px[i].name != py[i].name || !bit_identical(*px[i].tensor, *py[i].tensor)) return false;
  return true;
}

// 1. Gradient suite.

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  auto entries = primitive_grad_suite(0, 100);
  const auto composite = composite_grad_suite(0);
  entries.insert(entries.end(), composite.begin(), composite.end());
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_name;
  int failed = 0;
  std::set<std::string> composites;
  for (const auto& e : entries) {
    if (e.max_relative_error > worst) {
      worst = e.max_relative_error;
      worst_name = e.name;
    }
    failed += !(e.passed && e.max_relative_error < 1e-4);
  }
  for (const auto& e : composite) composites.insert(e.name.substr(0, e.name.find('/')));
  const bool ok = failed == 0 && secs < 120 && composites.size() >= 3;
  return {ok, fmt("%zu checks (%zu composite paths), %d failed, worst %.2e (%s), %.1f s", entries.size(),
                  composites.size(), failed, worst, worst_name.c_str(), secs)};
}

// 2. Shape conformance against the architecture table.

struct TableRow {
  const char* network;
  const char* layer;
  const char* params;
  Shape output;
};

std::vector<TableRow> architecture_table() {
  std::vector<TableRow> rows;
  const std::vector<std::tuple<const char*, const char*, Shape>> trunk = {
      {"Conv-1 (Reflection)", "(3,64,7,1,3)", {64, 352, 352}},
      {"InstanceNorm", "-", {64, 352, 352}},
      {"ReLU", "-", {64, 352, 352}},
      {"Conv-2 (Zeros)", "(64,128,3,1,1)", {128, 352, 352}},
      {"InstanceNorm", "-", {128, 352, 352}},
      {"ReLU", "-", {128, 352, 352}},
      {"Downsample", "-", {128, 176, 176}},
      {"Conv-3 (Zeros)", "(128,256,3,1,1)", {256, 176, 176}},
      {"InstanceNorm", "-", {256, 176, 176}},
      {"ReLU", "-", {256, 176, 176}},
      {"DownSample", "-", {256, 88, 88}},
  };
  for (const char* net : {"Encoder", "Style"})
    for (const auto& [layer, params, out] : trunk) rows.push_back({net, layer, params, out});
  rows.push_back({"Style", "AdaptiveAvgPool", "-", {256, 1, 1}});
  rows.push_back({"Style", "Conv-4", "(256,8,1,1,0)", {8, 1, 1}});
  for (const auto& r : std::vector<TableRow>{
           {"Aggregator", "AdaptiveInstanceNorm", "-", {1024}},
           {"Aggregator", "Linear-1", "(1024,3072)", {3072}},
           {"Aggregator", "Attention", "-", {1024}},
           {"Aggregator", "Linear-2", "(1024,1024)", {1024}},
           {"Aggregator", "AdaptiveInstanceNorm", "-", {1024}},
           {"Aggregator", "Linear-3", "(1024,4096)", {4096}},
           {"Aggregator", "GELU", "-", {4096}},
           {"Aggregator", "Linear-4", "(4096,1024)", {1024}},
           {"Generator", "UpSample", "-", {256, 176, 176}},
           {"Generator", "Conv-1 (Zeros)", "(256,128,3,1,1)", {128, 176, 176}},
           {"Generator", "InstanceNorm", "-", {128, 176, 176}},
           {"Generator", "ReLU", "-", {128, 176, 176}},
           {"Generator", "UpSample", "-", {128, 352, 352}},
           {"Generator", "Conv-2 (Zeros)", "(128,64,3,1,1)", {64, 352, 352}},
           {"Generator", "InstanceNorm", "-", {64, 352, 352}},
           {"Generator", "ReLU", "-", {64, 352, 352}},
           {"Generator", "Conv-3 (ReflectionPad)", "(64,3,7,1,3)", {3, 352, 352}},
           {"Generator", "Tanh", "-", {3, 352, 352}},
       })
    rows.push_back(r);
  return rows;
}

Outcome shape_conformance() {
  const auto cfg = parse_run_config(R"({"scale": "paper"})");
  const auto walk = shape_walk(cfg.model);
  const auto table = architecture_table();
  // Table rows must appear in order within each network's walk.
  std::map<std::string, std::size_t> cursor;
  int matched = 0;
  std::string missing;
  for (const auto& t : table) {
    auto& i = cursor[t.network];
    bool found = false;
    for (; i < walk.size(); ++i) {
      const auto& w = walk[i];
      if (w.network == t.network && w.layer == t.layer && w.params == t.params && w.output == t.output) {
        found = true;
        ++i;
        break;
      }
    }
    if (found) {
      ++matched;
    } else if (missing.empty()) {
      missing = std::string(t.network) + " " + t.layer;
    }
  }
  const bool ok = matched == static_cast<int>(table.size());
  return {ok, fmt("%d/%zu table rows reproduced%s%s", matched, table.size(), missing.empty() ? "" : ", first miss: ",
                  missing.c_str())};
}

// 3. Oracle equivalence.

Outcome oracle_equivalence() {
  Rng rng = derive_rng(3, {1});
  double roi_err = 0;
  const auto c = randn({1, 16, 16, 16}, rng);
  const auto c3 = reshape(c, {16, 16, 16});
  std::uniform_real_distribution<double> pos(2, 62), size(3, 40);
  for (int trial = 0; trial < 100; ++trial) {
    const BoundingBox box{pos(rng), pos(rng), size(rng), size(rng)};
    const std::int64_t k = 1 + trial % 4;
    const auto got = roi_align(c3, box, k);
    const auto cells = oracle::roi_oracle(c, 0, box, k);
    for (std::int64_t ch = 0; ch < 16; ++ch)
      for (std::int64_t cell = 0; cell < k * k; ++cell)
        roi_err = std::max(roi_err, std::abs(static_cast<double>(got.data()[static_cast<std::size_t>(ch * k * k + cell)] -
                                                                 cells[static_cast<std::size_t>(cell)][ch])));
  }

  double global_err = 0, instance_err = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng r = derive_rng(seed, {31});
    NceConfig cfg;
    cfg.patches_per_layer = 8;
    cfg.hidden_dim = 16;
    cfg.projection_dim = 8;
    cfg.instance_grid = 2;
    std::vector<ProjectionHead> heads;
    for (std::int64_t ch : {4, 8, 6}) heads.emplace_back(ch, cfg.hidden_dim, cfg.projection_dim, r);
    const EncoderFeatures fx{randn({2, 4, 8, 8}, r), randn({2, 8, 8, 8}, r), randn({2, 6, 4, 4}, r)};
    const EncoderFeatures fy{randn({2, 4, 8, 8}, r), randn({2, 8, 8, 8}, r), randn({2, 6, 4, 4}, r)};
    const auto locs = sample_patch_locations(fx, cfg, r);
    global_err = std::max(global_err, std::abs(global_content_loss(fx, fy, heads, cfg, locs).item() -
                                               static_cast<double>(oracle::global_loss_oracle(fx, fy, heads, cfg, locs))));
    const BoxLists boxes{{{8.3, 7.9, 9.2, 6.6}, {11, 5, 7, 8}}, {{8, 8, 16, 16}}};
    instance_err = std::max(
        instance_err, std::abs(instance_content_loss(fx.content, fy.content, boxes, heads[2], cfg).item() -
                               static_cast<double>(oracle::instance_loss_oracle(fx.content, fy.content, boxes,
                                                                                heads[2], cfg))));
  }
  const bool ok = roi_err < 1e-10 && global_err < 1e-10 && instance_err < 1e-10;
  return {ok, fmt("roi_align %.1e, global NCE %.1e, instance NCE %.1e (tolerance 1e-10)", roi_err, global_err,
                  instance_err)};
}

// 4. Closed-form loss values.

Outcome closed_forms() {
  const auto e0 = Tensor::from({2}, {1, 0});
  const auto e1 = Tensor::from({2}, {0, 1});
  const auto neg = Tensor::from({1, 2}, {0, 1});
  const double sym = info_nce(e0, e1, neg, 0.5).item();
  const double two = info_nce(e0, e0, neg, 1.0).item();
  const double total = total_loss(1, 1, 1, 1, 1, LossWeights{});
  const double e_sym = std::abs(sym - std::numbers::ln2);
  const double e_two = std::abs(two - std::log1p(std::exp(-1.0)));
  const bool ok = e_sym <= 1e-12 && e_two <= 1e-12 && total == 18.0;
  return {ok, fmt("symmetric %.17g (err %.1e), tau=1 %.17g (err %.1e), weighted total %.17g", sym, e_sym, two, e_two,
                  total)};
}

// 5. AdaIN invariant.

Outcome adain_invariant() {
  const BackboneConfig backbone;
  const AggregatorConfig cfg;
  Rng init = derive_rng(5, {1});
  Aggregator agg(cfg, backbone, init);
  ParamList params;
  agg.collect("aggregator", params);
  // Nonzero style maps so every block sees a style-dependent input.
  for (auto& p : params)
    if (p.name.find("style_m") != std::string::npos) *p.tensor = randn(p.tensor->shape(), init, 0.1);

  Rng rng = derive_rng(5, {2});
  std::uniform_int_distribution<int> count(0, 3);
  std::uniform_real_distribution<double> centre(12, 52), extent(8, 24);
  double worst_mean = 0, worst_std = 0, min_var = 1e300;
  int sites = 0;
  NoGradScope no_grad;
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = randn({1, backbone.content_channels, 16, 16}, rng);
    const auto s = randn({1, backbone.style_dim}, rng);
    std::vector<BoundingBox> boxes;
    for (int i = count(rng); i > 0; --i) boxes.push_back({centre(rng), centre(rng), extent(rng), extent(rng)});
    AggregateTrace trace;
    agg(c, {boxes}, s, &trace);
    for (const auto& block : trace.blocks[0])
      for (const Tensor* z : {&block.normalized_msa, &block.normalized_mlp}) {
        ++sites;
        const auto m = z->dim(0), d = z->dim(1);
        for (std::int64_t j = 0; j < d; ++j) {
          long double mu = 0, sq = 0;
          for (std::int64_t i = 0; i < m; ++i) mu += z->data()[static_cast<std::size_t>(i * d + j)];
          mu /= m;
          for (std::int64_t i = 0; i < m; ++i) {
            const long double v = z->data()[static_cast<std::size_t>(i * d + j)] - mu;
            sq += v * v;
          }
          const double var = static_cast<double>(sq / m);
          worst_mean = std::max(worst_mean, std::abs(static_cast<double>(mu)));
          worst_std = std::max(worst_std, std::abs(std::sqrt(var) - 1));
          // Input variance implied by the normalized spread: var_n = v / (v + eps).
          if (var < 1) min_var = std::min(min_var, kNormEps * var / (1 - var));
        }
      }
  }
  const bool ok = worst_mean < 1e-6 && worst_std < 1e-5;
  return {ok, fmt("%d sites over 100 inputs: max |mean| %.1e, max |std-1| %.1e, smallest pre-norm variance %.3g", sites,
                  worst_mean, worst_std, min_var)};
}

// 6. Position-embedding properties.

Outcome position_embeddings() {
  const std::int64_t bands = AggregatorConfig{}.freq_bands();
  const auto g0 = gamma(0, bands);
  bool zero_pattern = true;
  for (std::size_t i = 0; i < g0.size(); ++i) zero_pattern &= g0[i] == (i % 2 ? 1.0 : 0.0);

  const auto grid = pos_embed_global(8, 8, bands);
  bool in_range = true;
  for (Real v : grid.data()) in_range &= v >= -1 && v <= 1;
  const auto d = grid.dim(1);
  double closest = 1e300;
  for (std::int64_t i = 0; i < 64; ++i)
    for (std::int64_t j = i + 1; j < 64; ++j) {
      double dist = 0;
      for (std::int64_t k = 0; k < d; ++k)
        dist = std::max(dist, std::abs(static_cast<double>(grid.data()[static_cast<std::size_t>(i * d + k)] -
                                                           grid.data()[static_cast<std::size_t>(j * d + k)])));
      closest = std::min(closest, dist);
    }
  int cells_equal = 0;
  for (std::int64_t r = 0; r < 8; ++r)
    for (std::int64_t c = 0; c < 8; ++c) {
      const auto e = pos_embed_instance({(c + 0.5) / 8, (r + 0.5) / 8, 1.0 / 8, 1.0 / 8}, bands);
      cells_equal += bit_identical(e, reshape(slice(grid, 0, r * 8 + c, 1), {d}));
    }
  const bool ok = zero_pattern && in_range && closest > 0 && cells_equal == 64;
  return {ok, fmt("gamma(0) pattern %s, range %s, closest pair %.3g, %d/64 cells reproduced bitwise",
                  zero_pattern ? "exact" : "wrong", in_range ? "[-1,1]" : "violated", closest, cells_equal)};
}

// 7-9. Overfit experiment.

struct Evaluation {
  double ssim = 0, instance_ssim = 0, palette_in = 0, palette_out = 0;
  int instance_images = 0;
};

struct OverfitRun {
  std::vector<LossReport> history;
  double seconds = 0;
  std::unique_ptr<TrainState> state;
};

struct Corpus {
  std::vector<Sample> a = generate_dataset(Domain::kA, 8, 64, 0);
  std::vector<Sample> b = generate_dataset(Domain::kB, 8, 64, 0);
  Batch batch_a() const { return load_batch(a, {0, 1, 2, 3, 4, 5, 6, 7}); }
};

OverfitRun overfit(const Corpus& data, std::uint64_t seed, double lambda_ins) {
  auto cfg = parse_run_config(R"({"train": {"steps": 500, "ckpt_every": 0}})");
  cfg.train.seed = seed;
  cfg.train.weights.instance = lambda_ins;
  OverfitRun run;
  run.state = std::make_unique<TrainState>(cfg.model, cfg.train);
  const auto t0 = std::chrono::steady_clock::now();
  run.history = train(*run.state, cfg.train, data.a, data.b);
  run.seconds = seconds_since(t0);
  std::fprintf(stderr, "  overfit seed %llu lambda_ins %g: %.0f s\n", static_cast<unsigned long long>(seed),
               lambda_ins, run.seconds);
  return run;
}

Tensor style_code(const Model& m, std::uint64_t seed, std::int64_t batch) {
  Rng rng = derive_rng(seed, {0x7374796cull});
  const auto s = sample_style(rng, m.config().backbone.style_dim, 1);
  return concat(std::vector<Tensor>(static_cast<std::size_t>(batch), s), 0);
}

// Test-time protocol: boxes are not used.
Tensor translate_all(const Model& m, const Batch& x, std::uint64_t style_seed) {
  NoGradScope no_grad;
  return m.translate(x.images, no_boxes(x.images.dim(0)), style_code(m, style_seed, x.images.dim(0)));
}

Tensor image(const Tensor& batch, std::int64_t i) {
  return reshape(slice(batch, 0, i, 1), {batch.dim(1), batch.dim(2), batch.dim(3)});
}

Evaluation evaluate(const Corpus& data, const Tensor& y_hat) {
  Evaluation e;
  const auto n = static_cast<std::int64_t>(data.a.size());
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& s = data.a[static_cast<std::size_t>(i)];
    const auto y = image(y_hat, i);
    e.ssim += ssim(s.image, y) / static_cast<double>(n);
    e.palette_in += palette_distance(s.image, Domain::kB) / static_cast<double>(n);
    e.palette_out += palette_distance(y, Domain::kB) / static_cast<double>(n);
    try {
      e.instance_ssim += instance_ssim(s.image, y, s.boxes);
      ++e.instance_images;
    } catch (const std::invalid_argument&) {
    }
  }
  if (e.instance_images) e.instance_ssim /= e.instance_images;
  return e;
}

double window_mean(const std::vector<LossReport>& h, std::size_t from, double LossReport::*field) {
  double s = 0;
  for (std::size_t i = from; i < from + 10; ++i) s += h[i].*field;
  return s / 10;
}

Outcome overfit_criterion(const Corpus& data, const OverfitRun& run) {
  const auto& h = run.history;
  const auto last = h.size() - 10;
  const double r0 = window_mean(h, 0, &LossReport::recon_img), r1 = window_mean(h, last, &LossReport::recon_img);
  const double n0 = window_mean(h, 0, &LossReport::nce_global), n1 = window_mean(h, last, &LossReport::nce_global);
  const double t0 = window_mean(h, 0, &LossReport::total), t1 = window_mean(h, last, &LossReport::total);
  const auto e = evaluate(data, translate_all(run.state->model, data.batch_a(), 0));
  const bool a = r1 <= 0.5 * r0 && n1 <= 0.5 * n0;
  const bool b = e.palette_out < e.palette_in;
  const bool c = e.instance_ssim >= 0.3;
  const bool time_ok = run.seconds < 20 * 60;
  return {a && b && c && time_ok,
          fmt("(a) %s recon_img %.3f -> %.3f (%.0f%%), nce_global %.3f -> %.3f (%.0f%%); (b) %s palette_B %.3f vs "
              "input %.3f; (c) %s instance_ssim %.3f (ssim %.3f, %d images); %.0f s; total loss %.2f -> %.2f (%.0f%%)",
              a ? "ok" : "miss", r0, r1, 100 * r1 / r0, n0, n1, 100 * n1 / n0, b ? "ok" : "miss", e.palette_out,
              e.palette_in, c ? "ok" : "miss", e.instance_ssim, e.ssim, e.instance_images, run.seconds, t0, t1,
              100 * t1 / t0)};
}

Outcome multimodality(const Corpus& data, const OverfitRun& run) {
  const auto& m = run.state->model;
  const auto x = data.batch_a();
  const auto y1 = translate_all(m, x, 1);
  const auto y2 = translate_all(m, x, 2);
  double diff = 0;
  for (std::size_t i = 0; i < y1.data().size(); ++i) diff += std::abs(y1.data()[i] - y2.data()[i]);
  diff /= static_cast<double>(y1.numel());
  NoGradScope no_grad;
  const auto fx = m.content_encoder.features(x.images);
  Rng rng = derive_rng(8, {1});
  const auto locs = sample_patch_locations(fx, m.config().nce, rng);
  const double n1 =
      global_content_loss(fx, m.content_encoder.features(y1), m.nce_heads, m.config().nce, locs).item();
  const double n2 =
      global_content_loss(fx, m.content_encoder.features(y2), m.nce_heads, m.config().nce, locs).item();
  const bool varies = diff > 0.01;
  const bool holds = std::abs(n1 - n2) <= 0.1 * std::min(n1, n2);
  return {varies && holds, fmt("mean abs difference %.4f (> 0.01: %s); nce_global %.3f vs %.3f (within 10%%: %s)", diff,
                               varies ? "yes" : "no", n1, n2, holds ? "yes" : "no")};
}

Outcome instance_ablation(const Corpus& data, const OverfitRun& seed0) {
  double with_sum = 0, without_sum = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const double with = seed == 0 ? evaluate(data, translate_all(seed0.state->model, data.batch_a(), 0)).instance_ssim
                                  : [&] {
                                      const auto r = overfit(data, seed, 1.0);
                                      return evaluate(data, translate_all(r.state->model, data.batch_a(), 0))
                                          .instance_ssim;
                                    }();
    const auto r0 = overfit(data, seed, 0.0);
    const double without = evaluate(data, translate_all(r0.state->model, data.batch_a(), 0)).instance_ssim;
    with_sum += with;
    without_sum += without;
    per_seed += fmt("%sseed %llu: %.3f vs %.3f", seed ? "; " : "", static_cast<unsigned long long>(seed), without, with);
  }
  const bool ok = without_sum <= with_sum;
  return {ok, fmt("mean instance_ssim without %.3f vs with %.3f (%s)", without_sum / 3, with_sum / 3, per_seed.c_str())};
}

// 10. Determinism and persistence.

Outcome determinism(const Corpus& data) {
  auto cfg = parse_run_config(R"({"train": {"steps": 10, "ckpt_every": 0, "seed": 7}})");
  TrainState s1(cfg.model, cfg.train), s2(cfg.model, cfg.train);
  const auto h1 = train(s1, cfg.train, data.a, data.b);
  const auto h2 = train(s2, cfg.train, data.a, data.b);
  const bool same_run = h1 == h2 && same_params(s1.model, s2.model);

  const auto dir = fs::temp_directory_path() / "boxformer_acceptance";
  fs::remove_all(dir);
  TrainState first(cfg.model, cfg.train);
  train(first, cfg.train, data.a, data.b, {dir, 5, {}});
  save_checkpoint(dir / "mid.ifck", snapshot(first));
  const auto ckpt = load_checkpoint(dir / "mid.ifck");
  auto fresh_cfg = cfg.train;
  fresh_cfg.seed = 1234;
  TrainState resumed(model_config_from_checkpoint(ckpt), fresh_cfg);
  restore(resumed, ckpt);
  const auto tail = train(resumed, cfg.train, data.a, data.b);
  bool replay = tail.size() == 5 && same_params(resumed.model, s1.model);
  for (std::size_t i = 0; replay && i < 5; ++i) replay = tail[i] == h1[5 + i];
  fs::remove_all(dir);
  return {same_run && replay, fmt("10-step same-seed runs %s; resume at step 5 %s", same_run ? "bit-identical" : "differ",
                                  replay ? "replays bit-identically" : "diverges")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  bool report_only = false;
  std::string report_file;
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
  app.add_flag("--report-only", report_only, "Exit 0 even when criteria fail");
  app.add_option("--report-file", report_file, "Also write the PASS/FAIL lines to this file");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };

  int failures = 0;
  std::ofstream file;
  if (!report_file.empty()) file.open(report_file, std::ios::trunc);
  auto emit = [&](const std::string& line) {
    std::cout << line << std::endl;
    if (file.is_open()) file << line << std::endl;
  };
  auto report = [&](int n, const char* name, const Outcome& o) {
    std::ostringstream line;
    line << "criterion " << std::setw(2) << n << " " << (o.passed ? "PASS" : "FAIL") << "  " << name << ": "
         << o.detail;
    emit(line.str());
    failures += !o.passed;
  };
  try {
    if (wanted(1)) report(1, "gradient suite", gradient_suite());
    if (wanted(2)) report(2, "shape conformance", shape_conformance());
    if (wanted(3)) report(3, "oracle equivalence", oracle_equivalence());
    if (wanted(4)) report(4, "closed-form losses", closed_forms());
    if (wanted(5)) report(5, "AdaIN invariant", adain_invariant());
    if (wanted(6)) report(6, "position embeddings", position_embeddings());
    const Corpus data;
    if (wanted(7) || wanted(8) || wanted(9)) {
      const auto run = overfit(data, 0, 1.0);
      if (wanted(7)) report(7, "overfit experiment", overfit_criterion(data, run));
      if (wanted(8)) report(8, "multi-modality", multimodality(data, run));
      if (wanted(9)) report(9, "instance-loss ablation", instance_ablation(data, run));
    }
    if (wanted(10)) report(10, "determinism and persistence", determinism(data));
  } catch (const std::exception& e) {
    emit(std::string("acceptance harness error: ") + e.what());
    return 2;
  }
  emit(std::to_string(failures) + " criteria failed");
  return failures && !report_only ? 1 : 0;
}
