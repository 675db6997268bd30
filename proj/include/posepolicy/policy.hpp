#pragma once

// Conditional diffusion motion policy: a shared-weight image encoder for the
// (I_t, I_{t+k}) pair, a state encoder, residual-gated fusion, and a 1D
// temporal U-Net that predicts the clean k×6 action sequence (x0-prediction).

#include "posepolicy/eval.hpp"
#include "posepolicy/nn.hpp"
#include "posepolicy/synth_world.hpp"
#include "posepolicy/trajectory.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace posepolicy::policy {

struct PolicyConfig {
  int horizon = 8;
  int image_size = 160;
  int diffusion_steps = 100;
  int inference_steps = 10;
  std::vector<int> encoder_channels = {8, 16, 32};
  int encoder_width = 64;
  std::vector<int> denoiser_channels = {32, 64};
  int cond_width = 64;
  int time_embed_dim = 16;
  double learning_rate = 1e-4;
  double weight_decay = 1e-6;
  double adam_beta1 = 0.95;
  double adam_beta2 = 0.999;
  int batch_size = 32;
  int epochs = 20;
  double state_noise_trans = 0.5;               // mm
  double state_noise_rot = 0.008726646259971648; // rad (0.5 deg)
  std::uint64_t seed = 0;

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  /// Applies known keys from `kv`; unknown keys are ignored here.
  void apply_kv(const std::map<std::string, std::string>& kv);
};

struct NoiseSchedule {
  std::vector<double> alpha_bar;  // cumulative signal fraction per timestep

  int steps() const { return static_cast<int>(alpha_bar.size()); }
};

NoiseSchedule cosine_schedule(int diffusion_steps, double offset = 0.008);

/// Evenly spaced descending timesteps from T−1 to 0; all T when steps == T.
std::vector<int> ddim_timesteps(int diffusion_steps, int inference_steps);

std::vector<double> timestep_embedding(int t, int dim);

/// k×6 matrix, row i = normalized ΔT_{t+i+1}.
using ActionMatrix = Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor>;

struct EncodeOptions {
  bool zero_gate = false;  // bypass the gate: fused = visual features
};

class PolicyModel {
 public:
  PolicyModel(const PolicyConfig& config, std::uint64_t init_seed);

  const PolicyConfig& config() const { return config_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }

  std::optional<NormStats> norm_stats;

  /// Fused [B, encoder_width] features. States are already normalized.
  nn::Var encode(nn::Tape& tape, std::span<const synth::Observation* const> sources,
                 std::span<const synth::Observation* const> targets, std::span<const Vec6> states,
                 const EncodeOptions& options = {}) const;

  /// x0 prediction [B,6,k] from noisy [B,6,k] actions.
  nn::Var denoise(nn::Tape& tape, nn::Var noisy, std::span<const int> timesteps, nn::Var cond) const;

 private:
  nn::Var image_features(nn::Tape& tape, std::span<const synth::Observation* const> images) const;
  nn::Var res_block(nn::Tape& tape, const std::string& prefix, nn::Var x, nn::Var cond) const;
  void add_res_block(const std::string& prefix, int cin, int cout, std::mt19937_64& rng);

  PolicyConfig config_;
  nn::ParameterStore params_;
  int flat_features_ = 0;
};

/// Single-window convenience wrappers.
std::vector<double> encode(const PolicyModel& model, const synth::Observation& source,
                           const synth::Observation& target, const Vec6& state_normalized,
                           const EncodeOptions& options = {});
ActionMatrix denoise(const PolicyModel& model, const ActionMatrix& noisy, int t, const std::vector<double>& cond);

/// One training window in model space.
struct TrainItem {
  const synth::Observation* source = nullptr;
  const synth::Observation* target = nullptr;
  Pose state;          // anchored start pose, before augmentation
  ActionMatrix x0;     // normalized actions
};

std::vector<TrainItem> make_train_items(const synth::Dataset& dataset, const NormStats& stats);

/// Random quantities of one diffusion training step.
struct NoiseDraws {
  std::vector<int> timesteps;
  std::vector<ActionMatrix> noise;
  std::vector<Vec6> state_noise;  // (trans, rot) perturbation applied on the right
};

NoiseDraws draw_noise(const PolicyConfig& config, std::size_t batch, std::mt19937_64& rng);

/// x_t = sqrt(ᾱ_t) x0 + sqrt(1 − ᾱ_t) ε
ActionMatrix mix_noise(const ActionMatrix& x0, const ActionMatrix& eps, double alpha_bar);

/// MSE between the x0 prediction and x0. Accumulates parameter gradients when
/// `with_grad` is set.
double diffusion_loss(PolicyModel& model, std::span<const TrainItem> batch, const NoiseSchedule& schedule,
                      const NoiseDraws& draws, bool with_grad);

/// Draws noise, computes the loss and gradients, and applies one AdamW update.
/// Throws on a non-finite loss.
double train_step(PolicyModel& model, nn::AdamW& optimizer, std::span<const TrainItem> batch,
                  const NoiseSchedule& schedule, std::mt19937_64& rng);

nn::AdamW make_optimizer(const PolicyConfig& config);

/// DDIM (η = 0) from the given initial noise; returns the normalized x0.
ActionMatrix ddim_sample(const PolicyModel& model, const std::vector<double>& cond, const NoiseSchedule& schedule,
                         int inference_steps, const ActionMatrix& initial_noise);

ActionSequence sample_actions(const PolicyModel& model, const synth::Observation& source,
                              const synth::Observation& target, const Pose& state, const NoiseSchedule& schedule,
                              int inference_steps, const ActionMatrix& initial_noise);
ActionSequence sample_actions(const PolicyModel& model, const synth::Observation& source,
                              const synth::Observation& target, const Pose& state, const NoiseSchedule& schedule,
                              int inference_steps, std::mt19937_64& rng);

/// Produces k actions for a dataset window.
using ActionPredictor = std::function<ActionSequence(const synth::Dataset&, const synth::WindowSample&)>;

/// Policy conditioned on ground-truth start state; initial noise per window is
/// seeded from (seed, sequence id, t) so results do not depend on order.
ActionPredictor policy_predictor(const PolicyModel& model, const NoiseSchedule& schedule, int inference_steps,
                                 std::uint64_t seed);
ActionPredictor ground_truth_predictor();

/// Oracle-state rollout: each window start is conditioned on the ground-truth
/// pose; no feedback between windows.
std::vector<eval::WindowPrediction> rollout_oracle(const ActionPredictor& predictor, const synth::Dataset& dataset,
                                                   std::size_t stride, int w);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_rpe_trans = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<EpochStats> epochs;
  int best_epoch = 0;  // 0 = untrained parameters kept

  /// `epoch=… loss=… val_rpe_trans_mm=… seconds=… seed=…`, one line per epoch.
  std::string to_text() const;
};

struct TrainOptions {
  const synth::Dataset* validation = nullptr;
  std::size_t validation_stride = 1;
  std::function<void(const EpochStats&, const PolicyModel&)> on_epoch;
};

/// Fits normalization on `train` when the model has none, runs the configured
/// epochs, and restores the parameters of the best validation epoch.
TrainReport train(PolicyModel& model, const synth::Dataset& train_set, const TrainOptions& options = {});

void save_checkpoint(const std::filesystem::path& path, const PolicyModel& model);
PolicyModel load_checkpoint(const std::filesystem::path& path);

}  // namespace posepolicy::policy
