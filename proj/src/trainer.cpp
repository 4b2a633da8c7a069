#include "boxformer/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace boxformer {

namespace fs = std::filesystem;

LrSchedule lr_schedule_from_string(const std::string& name) {
  if (name == "linear") return LrSchedule::kLinearDecay;
  if (name == "constant") return LrSchedule::kConstant;
  if (name == "step") return LrSchedule::kStep;
  throw std::invalid_argument("unknown lr schedule '" + name + "' (expected linear, constant or step)");
}

std::string to_string(LrSchedule s) {
  switch (s) {
    case LrSchedule::kLinearDecay:
      return "linear";
    case LrSchedule::kConstant:
      return "constant";
    case LrSchedule::kStep:
      return "step";
  }
  return "linear";
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("train.lr must be > 0");
  if (batch < 1) throw std::invalid_argument("train.batch must be >= 1");
  if (steps < 0) throw std::invalid_argument("train.steps must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw std::invalid_argument("train.beta1 and train.beta2 must be in [0, 1)");
  }
  if (!(eps > 0)) throw std::invalid_argument("train.eps must be > 0");
  if (ckpt_every < 0) throw std::invalid_argument("train.ckpt_every must be >= 0");
  weights.validate();
}

double lr_at(std::int64_t step, std::int64_t total, const TrainConfig& cfg) {
  const double half = static_cast<double>(total) / 2.0;
  const auto s = static_cast<double>(step);
  switch (cfg.schedule) {
    case LrSchedule::kConstant:
      return cfg.lr;
    case LrSchedule::kStep:
      return s < half ? cfg.lr : cfg.lr * 0.1;
    case LrSchedule::kLinearDecay:
      break;
  }
  if (s <= half || total <= 0) return cfg.lr;
  return cfg.lr * std::max(0.0, (static_cast<double>(total) - s) / (static_cast<double>(total) - half));
}

void adam_update(std::span<Real> w, std::span<const Real> g, std::span<Real> m, std::span<Real> v, double lr,
                 double beta1, double beta2, double eps, std::int64_t t) {
  if (g.size() != w.size() || m.size() != w.size() || v.size() != w.size()) {
    throw ShapeError("adam_update: parameter, gradient and moment sizes differ");
  }
  if (t < 1) throw std::invalid_argument("adam_update: t must be >= 1");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = static_cast<Real>(beta1 * m[i] + (1 - beta1) * g[i]);
    v[i] = static_cast<Real>(beta2 * v[i] + (1 - beta2) * g[i] * g[i]);
    const double mh = m[i] / c1;
    const double vh = v[i] / c2;
    w[i] = static_cast<Real>(w[i] - lr * mh / (std::sqrt(vh) + eps));
  }
}

void Adam::step(const ParamList& params, const Gradients& grads, double lr) {
  ++t_;
  for (const auto& p : params) {
    if (!grads.has(*p.tensor)) continue;
    const auto& g = grads.of(*p.tensor);
    auto& mom = moments_[p.name];
    const auto n = static_cast<std::size_t>(p.tensor->numel());
    if (mom.m.size() != n) {
      mom.m.assign(n, 0);
      mom.v.assign(n, 0);
    }
    adam_update(p.tensor->mutable_data(), g.data(), mom.m, mom.v, lr, beta1_, beta2_, eps_, t_);
  }
}

TrainState::TrainState(const ModelConfig& model_cfg, const TrainConfig& cfg)
    : model(model_cfg, cfg.seed),
      opt_g(cfg.beta1, cfg.beta2, cfg.eps),
      opt_d(cfg.beta1, cfg.beta2, cfg.eps) {}

GeneratorTerms generator_terms(const Model& model, const Tensor& x, const BoxLists& boxes, const Tensor& y,
                               const Tensor& s, const Tensor& y_hat, const EncoderFeatures& fx,
                               const TrainConfig& cfg, Rng& rng) {
  (void)x;
  GeneratorTerms t;
  const auto& nce = model.config().nce;
  t.gan_g = generator_adversarial_loss(model.discriminator(y_hat), cfg.gan);
  const auto fy = model.content_encoder.features(y_hat);
  t.nce_global = global_content_loss(fx, fy, model.nce_heads, nce, rng);
  t.nce_instance = instance_content_loss(fx.content, fy.content, boxes, model.instance_head, nce);
  t.recon_style = style_recon_loss(model.style_encoder(y_hat), s);
  t.recon_img = image_recon_loss(model.reconstruct(y), y);
  t.total = total_loss(t.gan_g, t.nce_global, t.nce_instance, t.recon_style, t.recon_img, cfg.weights);
  return t;
}

namespace {

std::string describe(const LossReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "gan_d=" << r.gan_d << " gan_g=" << r.gan_g << " nce_global=" << r.nce_global
     << " nce_ins=" << r.nce_instance << " recon_img=" << r.recon_img << " recon_style=" << r.recon_style
     << " total=" << r.total;
  return os.str();
}

bool finite(const LossReport& r) {
  for (double v : {r.gan_d, r.gan_g, r.nce_global, r.nce_instance, r.recon_img, r.recon_style, r.total})
    if (!std::isfinite(v)) return false;
  return true;
}

std::vector<std::int64_t> draw_indices(Rng& rng, std::int64_t count, std::int64_t batch) {
  if (count < 1) throw std::invalid_argument("dataset is empty");
  std::vector<std::int64_t> out;
  if (batch <= count) {
    std::vector<std::int64_t> all(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) all[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = 0; i < batch; ++i) {
      std::uniform_int_distribution<std::int64_t> pick(i, count - 1);
      std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
      out.push_back(all[static_cast<std::size_t>(i)]);
    }
  } else {
    std::uniform_int_distribution<std::int64_t> pick(0, count - 1);
    for (std::int64_t i = 0; i < batch; ++i) out.push_back(pick(rng));
  }
  return out;
}

}  // namespace

LossReport train_step(TrainState& state, const Batch& x, const Batch& y, const TrainConfig& cfg, Rng& rng) {
  auto& model = state.model;
  const double lr = lr_at(state.step, cfg.steps, cfg);
  const auto batch = x.images.dim(0);
  const auto s = sample_style(rng, model.config().backbone.style_dim, batch);
  LossReport report;

  Tape g_tape;
  TapeScope g_scope(g_tape);
  const auto fx = model.content_encoder.features(x.images);
  const auto y_hat = model.generator(model.aggregator(fx.content, x.boxes, s).u);

  {
    Tape d_tape;
    TapeScope d_scope(d_tape);
    const auto loss_d =
        discriminator_loss(model.discriminator(y.images), model.discriminator(y_hat.detach()), cfg.gan);
    report.gan_d = loss_d.item();
    if (!std::isfinite(report.gan_d)) {
      throw TrainingAborted("non-finite discriminator loss at step " + std::to_string(state.step) + ": " +
                            describe(report));
    }
    const auto grads = backward(loss_d);
    state.opt_d.step(model.discriminator_params(), grads, lr);
  }

  const auto terms = generator_terms(model, x.images, x.boxes, y.images, s, y_hat, fx, cfg, rng);
  report.gan_g = terms.gan_g.item();
  report.nce_global = terms.nce_global.item();
  report.nce_instance = terms.nce_instance.item();
  report.recon_img = terms.recon_img.item();
  report.recon_style = terms.recon_style.item();
  report.total = terms.total.item();
  if (!finite(report)) {
    throw TrainingAborted("non-finite loss at step " + std::to_string(state.step) + ": " + describe(report));
  }
  const auto grads = backward(terms.total);
  state.opt_g.step(model.generator_params(), grads, lr);
  ++state.step;
  return report;
}

StepPlan plan_step(const TrainConfig& cfg, std::int64_t step, std::int64_t count_a, std::int64_t count_b) {
  StepPlan plan{{}, {}, derive_rng(cfg.seed, {0x73746570ull, static_cast<std::uint64_t>(step)})};
  plan.a_indices = draw_indices(plan.rng, count_a, cfg.batch);
  plan.b_indices = draw_indices(plan.rng, count_b, cfg.batch);
  return plan;
}

fs::path checkpoint_path(const fs::path& dir, std::int64_t step) {
  char name[64];
  std::snprintf(name, sizeof(name), "checkpoint_%06lld.ifck", static_cast<long long>(step));
  return dir / name;
}

std::vector<LossReport> train(TrainState& state, const TrainConfig& cfg, const std::vector<Sample>& domain_a,
                              const std::vector<Sample>& domain_b, const TrainOptions& options) {
  cfg.validate();
  const auto end = options.until_step >= 0 ? std::min(options.until_step, cfg.steps) : cfg.steps;
  std::ofstream csv;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    const auto path = options.out_dir / "metrics.csv";
    const bool append = state.step > 0 && fs::exists(path);
    csv.open(path, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write " + path.string());
    if (!append) csv << kMetricsHeader << "\n";
  }
  std::vector<LossReport> history;
  while (state.step < end) {
    const auto step = state.step;
    auto plan = plan_step(cfg, step, static_cast<std::int64_t>(domain_a.size()),
                          static_cast<std::int64_t>(domain_b.size()));
    const auto bx = load_batch(domain_a, plan.a_indices);
    const auto by = load_batch(domain_b, plan.b_indices);
    const double lr = lr_at(step, cfg.steps, cfg);
    const auto report = train_step(state, bx, by, cfg, plan.rng);
    history.push_back(report);
    if (csv.is_open()) {
      char line[512];
      std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                    static_cast<long long>(step), report.gan_d, report.gan_g, report.nce_global, report.nce_instance,
                    report.recon_img, report.recon_style, report.total, lr);
      csv << line << std::flush;
    }
    if (options.on_step) options.on_step(step, report);
    const bool periodic = cfg.ckpt_every > 0 && state.step % cfg.ckpt_every == 0;
    if (!options.out_dir.empty() && (periodic || state.step == cfg.steps)) {
      save_checkpoint(checkpoint_path(options.out_dir, state.step), snapshot(state));
    }
  }
  return history;
}

// Checkpoint format: "IFCK", u32 version, u64 step, then records to EOF:
// u32 name length, name bytes, u32 rank, rank x u64 dims, f64 payload.

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::istream& is, T& v) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

void add_record(Checkpoint& c, std::string name, Shape shape, std::span<const Real> values) {
  c.records.push_back({std::move(name), std::move(shape), std::vector<double>(values.begin(), values.end())});
}

void add_scalar(Checkpoint& c, std::string name, double v) { c.records.push_back({std::move(name), {}, {v}}); }

double scalar(const Checkpoint& c, const std::string& name) {
  const auto* r = c.find(name);
  if (!r || r->values.size() != 1) throw CheckpointError("checkpoint is missing record " + name);
  return r->values.front();
}

double layer_code(const std::string& name) {
  if (name == "conv1") return 1;
  if (name == "conv2") return 2;
  return 3;
}

void add_adam(Checkpoint& c, const std::string& prefix, const Adam& opt) {
  add_scalar(c, prefix + ".t", static_cast<double>(opt.t()));
  for (const auto& [name, mom] : opt.moments()) {
    const auto n = static_cast<std::int64_t>(mom.m.size());
    add_record(c, prefix + ".m." + name, {n}, mom.m);
    add_record(c, prefix + ".v." + name, {n}, mom.v);
  }
}

void restore_adam(const Checkpoint& c, const std::string& prefix, Adam& opt) {
  opt.set_t(static_cast<std::int64_t>(scalar(c, prefix + ".t")));
  opt.moments().clear();
  const auto mp = prefix + ".m.";
  for (const auto& r : c.records) {
    if (r.name.rfind(mp, 0) != 0) continue;
    const auto name = r.name.substr(mp.size());
    const auto* v = c.find(prefix + ".v." + name);
    if (!v || v->values.size() != r.values.size()) throw CheckpointError("checkpoint has unmatched moments for " + name);
    auto& mom = opt.moments()[name];
    mom.m.assign(r.values.begin(), r.values.end());
    mom.v.assign(v->values.begin(), v->values.end());
  }
}

}  // namespace

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write " + tmp.string());
    os.write("IFCK", 4);
    put<std::uint32_t>(os, Checkpoint::kVersion);
    put<std::uint64_t>(os, ckpt.step);
    for (const auto& r : ckpt.records) {
      if (static_cast<std::int64_t>(r.values.size()) != numel(r.shape)) {
        throw CheckpointError("record " + r.name + " has " + std::to_string(r.values.size()) + " values for shape " +
                              to_string(r.shape));
      }
      put<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
      os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
      put<std::uint32_t>(os, static_cast<std::uint32_t>(r.shape.size()));
      for (auto d : r.shape) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
      os.write(reinterpret_cast<const char*>(r.values.data()), static_cast<std::streamsize>(r.values.size() * 8));
    }
    if (!os) throw CheckpointError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "IFCK") throw CheckpointError(path.string() + ": bad magic");
  std::uint32_t version = 0;
  Checkpoint c;
  if (!get(is, version) || version != Checkpoint::kVersion) {
    throw CheckpointError(path.string() + ": unsupported version " + std::to_string(version));
  }
  if (!get(is, c.step)) throw CheckpointError(path.string() + ": truncated header");
  while (true) {
    std::uint32_t len = 0;
    if (!get(is, len)) break;
    CheckpointRecord r;
    r.name.resize(len);
    std::uint32_t rank = 0;
    if (!is.read(r.name.data(), len) || !get(is, rank) || rank > 8) {
      throw CheckpointError(path.string() + ": truncated record");
    }
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::uint64_t d = 0;
      if (!get(is, d)) throw CheckpointError(path.string() + ": truncated dims in " + r.name);
      r.shape.push_back(static_cast<std::int64_t>(d));
    }
    r.values.resize(static_cast<std::size_t>(numel(r.shape)));
    if (!is.read(reinterpret_cast<char*>(r.values.data()), static_cast<std::streamsize>(r.values.size() * 8))) {
      throw CheckpointError(path.string() + ": truncated payload in " + r.name);
    }
    c.records.push_back(std::move(r));
  }
  return c;
}

Checkpoint snapshot(TrainState& state) {
  Checkpoint c;
  c.step = static_cast<std::uint64_t>(state.step);
  const auto& mc = state.model.config();
  add_scalar(c, "meta.image_size", static_cast<double>(mc.backbone.image_size));
  add_scalar(c, "meta.base_channels", static_cast<double>(mc.backbone.base_channels));
  add_scalar(c, "meta.content_channels", static_cast<double>(mc.backbone.content_channels));
  add_scalar(c, "meta.style_dim", static_cast<double>(mc.backbone.style_dim));
  add_scalar(c, "meta.patch_stride", static_cast<double>(mc.aggregator.patch_stride));
  add_scalar(c, "meta.token_dim", static_cast<double>(mc.aggregator.token_dim));
  add_scalar(c, "meta.blocks", static_cast<double>(mc.aggregator.blocks));
  add_scalar(c, "meta.heads", static_cast<double>(mc.aggregator.heads));
  add_scalar(c, "meta.mlp_dim", static_cast<double>(mc.aggregator.mlp_dim));
  add_scalar(c, "meta.nce_temperature", mc.nce.temperature);
  add_scalar(c, "meta.nce_patches_per_layer", static_cast<double>(mc.nce.patches_per_layer));
  add_scalar(c, "meta.nce_projection_dim", static_cast<double>(mc.nce.projection_dim));
  add_scalar(c, "meta.nce_hidden_dim", static_cast<double>(mc.nce.hidden_dim));
  add_scalar(c, "meta.nce_instance_grid", static_cast<double>(mc.nce.instance_grid));
  std::vector<Real> layers;
  for (const auto& l : mc.nce.layers) layers.push_back(static_cast<Real>(layer_code(l)));
  add_record(c, "meta.nce_layers", {static_cast<std::int64_t>(layers.size())}, layers);
  for (const auto& p : state.model.all_params()) add_record(c, "model." + p.name, p.tensor->shape(), p.tensor->data());
  add_adam(c, "adam_g", state.opt_g);
  add_adam(c, "adam_d", state.opt_d);
  return c;
}

ModelConfig model_config_from_checkpoint(const Checkpoint& c) {
  ModelConfig mc;
  auto i64 = [&](const char* name) { return static_cast<std::int64_t>(scalar(c, name)); };
  mc.backbone = {i64("meta.image_size"), i64("meta.base_channels"), i64("meta.content_channels"),
                 i64("meta.style_dim")};
  mc.aggregator = {i64("meta.patch_stride"), i64("meta.token_dim"), i64("meta.blocks"), i64("meta.heads"),
                   i64("meta.mlp_dim")};
  mc.nce.temperature = scalar(c, "meta.nce_temperature");
  mc.nce.patches_per_layer = i64("meta.nce_patches_per_layer");
  mc.nce.projection_dim = i64("meta.nce_projection_dim");
  mc.nce.hidden_dim = i64("meta.nce_hidden_dim");
  mc.nce.instance_grid = i64("meta.nce_instance_grid");
  const auto* layers = c.find("meta.nce_layers");
  if (!layers) throw CheckpointError("checkpoint is missing record meta.nce_layers");
  mc.nce.layers.clear();
  for (double code : layers->values) {
    mc.nce.layers.push_back(code == 1 ? "conv1" : code == 2 ? "conv2" : "content");
  }
  try {
    mc.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint architecture is invalid: ") + e.what());
  }
  return mc;
}

void restore_model(Model& model, const Checkpoint& ckpt) {
  for (const auto& p : model.all_params()) {
    const auto* r = ckpt.find("model." + p.name);
    if (!r) throw CheckpointError("checkpoint is missing parameter " + p.name);
    if (r->shape != p.tensor->shape()) {
      throw CheckpointError("parameter " + p.name + " has shape " + to_string(r->shape) + " in the checkpoint but " +
                            to_string(p.tensor->shape()) + " in the model");
    }
    auto dst = p.tensor->mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(r->values[i]);
  }
}

void restore(TrainState& state, const Checkpoint& ckpt) {
  restore_model(state.model, ckpt);
  restore_adam(ckpt, "adam_g", state.opt_g);
  restore_adam(ckpt, "adam_d", state.opt_d);
  state.step = static_cast<std::int64_t>(ckpt.step);
}

}  // namespace boxformer
