#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "boxformer/data.hpp"
#include "boxformer/losses.hpp"
#include "boxformer/model.hpp"

namespace boxformer {

enum class LrSchedule { kLinearDecay, kConstant, kStep };

LrSchedule lr_schedule_from_string(const std::string& name);
std::string to_string(LrSchedule s);

struct TrainConfig {
  double lr = 2e-4;
  std::int64_t batch = 2;
  std::int64_t steps = 2000;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  LrSchedule schedule = LrSchedule::kLinearDecay;
  std::uint64_t seed = 0;
  std::int64_t ckpt_every = 500;  // 0: only the final checkpoint
  LossWeights weights;
  GanMode gan = GanMode::kLogistic;

  void validate() const;
};

/// Linear decay: lr for step < total/2, then linearly to 0 at total.
/// Step: lr before total/2, lr/10 after. Constant: lr.
double lr_at(std::int64_t step, std::int64_t total, const TrainConfig& cfg);

/// One bias-corrected Adam update of w in place; t >= 1.
void adam_update(std::span<Real> w, std::span<const Real> g, std::span<Real> m, std::span<Real> v, double lr,
                 double beta1, double beta2, double eps, std::int64_t t);

class Adam {
 public:
  struct Moments {
    std::vector<Real> m, v;
  };

  Adam() = default;
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Updates every parameter that has a gradient; others are left alone.
  void step(const ParamList& params, const Gradients& grads, double lr);

  std::int64_t t() const { return t_; }
  void set_t(std::int64_t t) { t_ = t; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

struct TrainState {
  Model model;
  Adam opt_g;
  Adam opt_d;
  std::int64_t step = 0;

  TrainState(const ModelConfig& model_cfg, const TrainConfig& cfg);
};

/// Generator-side terms of one step, all still on the active tape.
struct GeneratorTerms {
  Tensor gan_g, nce_global, nce_instance, recon_style, recon_img, total;
};

/// y_hat = translate(x, boxes, s); evaluates every generator-side loss.
/// `fx` may be passed when E(x) was already computed.
GeneratorTerms generator_terms(const Model& model, const Tensor& x, const BoxLists& boxes, const Tensor& y,
                               const Tensor& s, const Tensor& y_hat, const EncoderFeatures& fx,
                               const TrainConfig& cfg, Rng& rng);

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// D step on (y, detached y_hat) then G step on the Eq. total, one Adam
/// update each. Throws TrainingAborted on a non-finite loss.
LossReport train_step(TrainState& state, const Batch& x, const Batch& y, const TrainConfig& cfg, Rng& rng);

/// Batch indices and RNG for a given step; a pure function of (seed, step).
struct StepPlan {
  std::vector<std::int64_t> a_indices;
  std::vector<std::int64_t> b_indices;
  Rng rng;
};
StepPlan plan_step(const TrainConfig& cfg, std::int64_t step, std::int64_t count_a, std::int64_t count_b);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::int64_t until_step = -1;   // stop early (exclusive); -1 runs to cfg.steps
  std::function<void(std::int64_t, const LossReport&)> on_step;
};

/// Runs steps state.step .. cfg.steps - 1. Writes metrics.csv (appending on
/// resume) and checkpoints when out_dir is set.
std::vector<LossReport> train(TrainState& state, const TrainConfig& cfg, const std::vector<Sample>& domain_a,
                              const std::vector<Sample>& domain_b, const TrainOptions& options = {});

constexpr const char* kMetricsHeader = "step,gan_d,gan_g,nce_global,nce_ins,recon_img,recon_style,total,lr";

// Checkpoints.

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint64_t step = 0;
  std::vector<CheckpointRecord> records;

  const CheckpointRecord* find(const std::string& name) const;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Architecture metadata, model parameters and both Adam states.
Checkpoint snapshot(TrainState& state);
/// Throws CheckpointError on missing records or shape mismatches.
void restore(TrainState& state, const Checkpoint& ckpt);
/// Model parameters only (for inference).
void restore_model(Model& model, const Checkpoint& ckpt);
ModelConfig model_config_from_checkpoint(const Checkpoint& ckpt);

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t step);

}  // namespace boxformer
