#include "cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "boxformer/config.hpp"
#include "boxformer/grad_suite.hpp"
#include "boxformer/metrics.hpp"
#include "boxformer/ops.hpp"
#include "boxformer/random.hpp"
#include "boxformer/trainer.hpp"
#include "json.hpp"

namespace boxformer::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Errors that map to the usage/config exit code.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<Domain> parse_domains(const std::string& list) {
  std::vector<Domain> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(domain_from_string(item));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (out.empty()) throw UsageError("--domains must list at least one of A, B");
  return out;
}

std::vector<Sample> require_dataset(const fs::path& dir, const std::string& flag) {
  if (!fs::is_directory(dir)) throw UsageError(flag + ": dataset directory " + dir.string() + " does not exist");
  auto samples = read_dataset(dir);
  if (samples.empty()) throw UsageError(flag + ": dataset " + dir.string() + " is empty");
  return samples;
}

Model load_model(const fs::path& ckpt_path) {
  const auto ckpt = load_checkpoint(ckpt_path);
  Model model(model_config_from_checkpoint(ckpt));
  restore_model(model, ckpt);
  return model;
}

Tensor batch_of(const Tensor& image) {
  auto shape = image.shape();
  shape.insert(shape.begin(), 1);
  return reshape(image, shape);
}

Tensor unbatch(const Tensor& image) {
  return reshape(image, {image.dim(1), image.dim(2), image.dim(3)});
}

void check_size(const Model& model, const Sample& s) {
  const auto size = model.config().backbone.image_size;
  if (s.image.dim(1) != size || s.image.dim(2) != size) {
    throw UsageError("image " + s.id + " is " + std::to_string(s.image.dim(2)) + "x" + std::to_string(s.image.dim(1)) +
                     " but the checkpoint expects " + std::to_string(size) + "x" + std::to_string(size));
  }
}

Tensor style_from_seed(const Model& model, std::uint64_t seed) {
  auto rng = derive_rng(seed, {0x7374796cull});
  return sample_style(rng, model.config().backbone.style_dim, 1);
}

Tensor translate_one(const Model& model, const Sample& s, const Tensor& style, bool use_boxes) {
  check_size(model, s);
  NoGradScope no_grad;
  const BoxLists boxes = {use_boxes ? s.boxes : std::vector<BoundingBox>{}};
  return unbatch(model.translate(batch_of(s.image), boxes, style));
}

bool parse_on_off(const std::string& v) {
  if (v == "on") return true;
  if (v == "off") return false;
  throw UsageError("--boxes must be on or off");
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

// gen-data

struct GenDataArgs {
  std::string out;
  std::int64_t n = 16;
  std::int64_t size = 64;
  std::uint64_t seed = 0;
  std::string domains = "A,B";
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  if (a.size <= 0 || a.size % 4 != 0) throw UsageError("size must be divisible by 4");
  if (a.n < 1) throw UsageError("n must be >= 1");
  for (auto d : parse_domains(a.domains)) {
    const auto dir = fs::path(a.out) / to_string(d);
    const auto samples = generate_dataset(d, a.n, a.size, a.seed);
    write_dataset(samples, dir);
    std::int64_t boxes = 0;
    for (const auto& s : samples) boxes += static_cast<std::int64_t>(s.boxes.size());
    out << "domain " << to_string(d) << ": " << samples.size() << " images of " << a.size << "x" << a.size << ", "
        << boxes << " boxes -> " << dir.string() << "\n";
  }
  return kExitOk;
}

// train

struct TrainArgs {
  std::string config, data_a, data_b, out, resume;
};

int train_cmd(const TrainArgs& a, std::ostream& out) {
  if (!fs::exists(a.config)) throw ConfigError("config file " + a.config + " does not exist");
  auto cfg = load_run_config(a.config);
  if (!a.data_a.empty()) cfg.paths.data_a = a.data_a;
  if (!a.data_b.empty()) cfg.paths.data_b = a.data_b;
  if (!a.out.empty()) cfg.paths.out = a.out;
  if (cfg.paths.data_a.empty() || cfg.paths.data_b.empty() || cfg.paths.out.empty()) {
    throw UsageError("train needs --data-a, --data-b and --out (or paths in the config)");
  }
  const auto domain_a = require_dataset(cfg.paths.data_a, "--data-a");
  const auto domain_b = require_dataset(cfg.paths.data_b, "--data-b");
  const auto size = cfg.model.backbone.image_size;
  for (const auto* set : {&domain_a, &domain_b}) {
    if (set->front().image.dim(1) != size) {
      throw UsageError("dataset images are " + std::to_string(set->front().image.dim(1)) +
                       " px but backbone.image_size is " + std::to_string(size));
    }
  }
  const fs::path out_dir = cfg.paths.out;
  fs::create_directories(out_dir);
  write_text(out_dir / "run.json", to_json(cfg));

  TrainState state(cfg.model, cfg.train);
  if (!a.resume.empty()) {
    const auto ckpt = load_checkpoint(a.resume);
    const auto saved = model_config_from_checkpoint(ckpt);
    if (to_json(RunConfig{cfg.scale, saved, cfg.train, cfg.paths}) != to_json(cfg)) {
      throw CheckpointError("checkpoint " + a.resume + " was written by a different architecture");
    }
    restore(state, ckpt);
    out << "resumed from step " << state.step << "\n";
  }
  TrainOptions options;
  options.out_dir = out_dir;
  const auto every = std::max<std::int64_t>(1, cfg.train.steps / 20);
  options.on_step = [&](std::int64_t step, const LossReport& r) {
    if (step % every == 0 || step + 1 == cfg.train.steps) {
      out << "step " << step << " total " << r.total << " gan_d " << r.gan_d << " nce " << r.nce_global
          << " recon " << r.recon_img << "\n";
    }
  };
  train(state, cfg.train, domain_a, domain_b, options);
  out << "finished " << state.step << " steps -> " << out_dir.string() << "\n";
  return kExitOk;
}

// translate

struct TranslateArgs {
  std::string ckpt, input, out, style_from, boxes = "off";
  std::optional<std::uint64_t> style_seed;
};

int translate_cmd(const TranslateArgs& a, std::ostream& out) {
  const bool use_boxes = parse_on_off(a.boxes);
  const auto model = load_model(a.ckpt);
  auto samples = require_dataset(a.input, "--input");
  Tensor style;
  if (!a.style_from.empty()) {
    Sample ref;
    ref.image = read_ppm(a.style_from);
    ref.id = a.style_from;
    check_size(model, ref);
    NoGradScope no_grad;
    style = model.style_encoder(batch_of(ref.image));
  } else {
    style = style_from_seed(model, a.style_seed.value_or(0));
  }
  for (auto& s : samples) s.image = translate_one(model, s, style, use_boxes);
  write_dataset(samples, a.out);
  out << "translated " << samples.size() << " images -> " << a.out << "\n";
  return kExitOk;
}

// eval

struct EvalArgs {
  std::string ckpt, data_a, data_b, out, boxes = "off";
  std::uint64_t style_seed = 0;
};

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  const bool use_boxes = parse_on_off(a.boxes);
  const auto model = load_model(a.ckpt);
  const auto domain_a = require_dataset(a.data_a, "--data-a");
  const auto domain_b = require_dataset(a.data_b, "--data-b");
  const auto style = style_from_seed(model, a.style_seed);
  json images = json::array();
  std::map<std::string, std::vector<double>> agg;
  for (const auto& s : domain_a) {
    const auto y_hat = translate_one(model, s, style, use_boxes);
    json rec;
    rec["id"] = s.id;
    rec["ssim"] = ssim(s.image, y_hat);
    agg["ssim"].push_back(rec["ssim"]);
    try {
      rec["instance_ssim"] = instance_ssim(s.image, y_hat, s.boxes);
      agg["instance_ssim"].push_back(rec["instance_ssim"]);
    } catch (const std::invalid_argument&) {
      rec["instance_ssim"] = nullptr;
    }
    rec["palette_A"] = palette_distance(y_hat, Domain::kA);
    rec["palette_B"] = palette_distance(y_hat, Domain::kB);
    rec["input_palette_A"] = palette_distance(s.image, Domain::kA);
    rec["input_palette_B"] = palette_distance(s.image, Domain::kB);
    for (const char* k : {"palette_A", "palette_B", "input_palette_A", "input_palette_B"}) agg[k].push_back(rec[k]);
    images.push_back(rec);
  }
  for (const auto& s : domain_b) agg["reference_B_palette_B"].push_back(palette_distance(s.image, Domain::kB));
  json aggregate;
  for (const auto& [k, v] : agg) aggregate[k] = mean_of(v);
  aggregate["images"] = domain_a.size();
  aggregate["instance_ssim_images"] = agg["instance_ssim"].size();
  json doc = {{"checkpoint", a.ckpt}, {"style_seed", a.style_seed}, {"boxes", a.boxes}, {"images", images},
              {"aggregate", aggregate}};
  const auto path = fs::path(a.out) / "metrics.json";
  write_text(path, doc.dump(2) + "\n");
  out << "ssim " << aggregate["ssim"].get<double>() << " palette_B " << aggregate["palette_B"].get<double>()
      << " -> " << path.string() << "\n";
  return kExitOk;
}

// grad-check

int grad_check_cmd(std::uint64_t seed, std::ostream& out) {
  auto entries = primitive_grad_suite(seed, 100);
  const auto composite = composite_grad_suite(seed);
  entries.insert(entries.end(), composite.begin(), composite.end());
  bool ok = true;
  out << std::left << std::setw(52) << "check" << std::setw(14) << "max_rel_err"
      << "result\n";
  for (const auto& e : entries) {
    char err[32];
    std::snprintf(err, sizeof(err), "%.3e", e.max_relative_error);
    out << std::setw(52) << e.name << std::setw(14) << err << (e.passed ? "pass" : "FAIL") << "\n";
    ok = ok && e.passed;
  }
  if (!ok) {
    for (const auto& e : entries)
      if (!e.passed) out << "failing check: " << e.name << "\n";
  }
  return ok ? kExitOk : kExitNumeric;
}

// report

struct ReportArgs {
  std::string run, out, ckpt, data;
  std::int64_t rows = 4;
  std::uint64_t style_seed = 0;
};

constexpr std::int64_t kSeparator = 2;

fs::path latest_checkpoint(const fs::path& run) {
  fs::path best;
  if (!fs::is_directory(run)) throw UsageError("run directory " + run.string() + " does not exist");
  for (const auto& e : fs::directory_iterator(run)) {
    const auto name = e.path().filename().string();
    if (name.rfind("checkpoint_", 0) == 0 && e.path().extension() == ".ifck" && (best.empty() || e.path() > best)) {
      best = e.path();
    }
  }
  if (best.empty()) throw UsageError("no checkpoint found in " + run.string());
  return best;
}

void write_loss_curve(const fs::path& metrics, const fs::path& dest) {
  std::ifstream in(metrics);
  if (!in) throw UsageError("cannot read " + metrics.string());
  std::string header;
  std::getline(in, header);
  std::ofstream os(dest);
  if (!os) throw std::runtime_error("cannot write " + dest.string());
  os << header << ",total_ma10\n";
  std::vector<double> totals;
  std::string line;
  const int total_column = 7;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (int c = 0; c <= total_column && std::getline(ss, cell, ','); ++c) {
    }
    totals.push_back(std::stod(cell));
    const auto n = std::min<std::size_t>(10, totals.size());
    double ma = 0;
    for (std::size_t i = totals.size() - n; i < totals.size(); ++i) ma += totals[i];
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", ma / static_cast<double>(n));
    os << line << "," << buf << "\n";
  }
}

int report_cmd(const ReportArgs& a, std::ostream& out) {
  const fs::path run = a.run;
  const fs::path out_dir = a.out;
  fs::create_directories(out_dir);
  write_loss_curve(run / "metrics.csv", out_dir / "loss_curve.csv");

  const auto ckpt = a.ckpt.empty() ? latest_checkpoint(run) : fs::path(a.ckpt);
  const auto model = load_model(ckpt);
  std::string data = a.data;
  if (data.empty()) {
    const auto cfg = load_run_config(run / "run.json");
    data = cfg.paths.data_a;
  }
  const auto samples = require_dataset(data, "--data");
  const auto size = model.config().backbone.image_size;
  const auto rows = std::min<std::int64_t>(a.rows, static_cast<std::int64_t>(samples.size()));
  if (rows < 1) throw UsageError("--rows must be >= 1");
  const auto width = 3 * size + 2 * kSeparator;
  const auto height = rows * size + (rows - 1) * kSeparator;
  auto montage = Tensor::full({3, height, width}, 1);
  auto dst = montage.mutable_data();
  const auto style = style_from_seed(model, a.style_seed);
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto& s = samples[static_cast<std::size_t>(r)];
    Tensor recon;
    {
      NoGradScope no_grad;
      check_size(model, s);
      recon = unbatch(model.reconstruct(batch_of(s.image)));
    }
    const Tensor tiles[3] = {s.image, translate_one(model, s, style, false), recon};
    for (int t = 0; t < 3; ++t) {
      const auto src = tiles[t].data();
      const auto x0 = t * (size + kSeparator);
      const auto y0 = r * (size + kSeparator);
      for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t y = 0; y < size; ++y)
          for (std::int64_t x = 0; x < size; ++x) {
            dst[static_cast<std::size_t>((c * height + y0 + y) * width + x0 + x)] =
                src[static_cast<std::size_t>((c * size + y) * size + x)];
          }
    }
  }
  write_ppm(out_dir / "montage.ppm", montage);
  out << "wrote " << (out_dir / "loss_curve.csv").string() << " and " << (out_dir / "montage.ppm").string() << " ("
      << width << "x" << height << ", checkpoint " << ckpt.filename().string() << ")\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Box-conditioned transformer image-to-image translation", "boxformer"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate synthetic domain datasets");
  gen->add_option("--out", gd.out, "Output directory (one subdirectory per domain)")->required();
  gen->add_option("--n", gd.n, "Samples per domain");
  gen->add_option("--size", gd.size, "Image size in pixels (divisible by 4)");
  gen->add_option("--seed", gd.seed, "Base seed");
  gen->add_option("--domains", gd.domains, "Comma-separated domains (A,B)");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", ta.config, "Run config JSON")->required();
  tr->add_option("--data-a", ta.data_a, "Source-domain dataset");
  tr->add_option("--data-b", ta.data_b, "Target-domain dataset");
  tr->add_option("--out", ta.out, "Run output directory");
  tr->add_option("--resume", ta.resume, "Checkpoint to resume from");

  TranslateArgs tl;
  auto* trans = app.add_subcommand("translate", "Translate a dataset with a checkpoint");
  trans->add_option("--ckpt", tl.ckpt, "Checkpoint")->required();
  trans->add_option("--input", tl.input, "Input dataset directory")->required();
  trans->add_option("--out", tl.out, "Output dataset directory")->required();
  auto* seed_opt = trans->add_option("--style-seed", tl.style_seed, "Seed of the sampled style code");
  trans->add_option("--style-from", tl.style_from, "PPM image whose style code is used")->excludes(seed_opt);
  trans->add_option("--boxes", tl.boxes, "Use annotated boxes as instance tokens (on|off)");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Compute SSIM, instance SSIM and palette distances");
  eval->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval->add_option("--data-a", ev.data_a, "Source-domain dataset")->required();
  eval->add_option("--data-b", ev.data_b, "Target-domain dataset")->required();
  eval->add_option("--out", ev.out, "Output directory for metrics.json")->required();
  eval->add_option("--style-seed", ev.style_seed, "Seed of the sampled style code");
  eval->add_option("--boxes", ev.boxes, "Use annotated boxes as instance tokens (on|off)");

  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("grad-check", "Run the gradient-check suites");
  gc->add_option("--seed", gc_seed, "Seed");

  ReportArgs rp;
  auto* rep = app.add_subcommand("report", "Write loss-curve CSV and an image montage");
  rep->add_option("--run", rp.run, "Run directory")->required();
  rep->add_option("--out", rp.out, "Output directory")->required();
  rep->add_option("--ckpt", rp.ckpt, "Checkpoint (default: latest in the run)");
  rep->add_option("--data", rp.data, "Dataset for the montage (default: the run's data_a)");
  rep->add_option("--rows", rp.rows, "Montage rows");
  rep->add_option("--style-seed", rp.style_seed, "Seed of the sampled style code");

  std::vector<const char*> argv = {"boxformer"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return gen_data(gd, out);
    if (tr->parsed()) return train_cmd(ta, out);
    if (trans->parsed()) return translate_cmd(tl, out);
    if (eval->parsed()) return eval_cmd(ev, out);
    if (gc->parsed()) return grad_check_cmd(gc_seed, out);
    if (rep->parsed()) return report_cmd(rp, out);
  } catch (const TrainingAborted& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace boxformer::cli
