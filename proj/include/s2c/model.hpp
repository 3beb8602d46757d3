#pragma once

// UNet baseline and the two-stage refiner: stage 1 maps imagery to a coarse
// water probability, stage 2 maps (imagery, stage-1 probability, point
// raster) to the refined probability.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "s2c/dataset.hpp"
#include "s2c/nn.hpp"
#include "s2c/raster.hpp"

namespace s2c::model {

struct ArchSpec {
  int levels = 2;
  int base_channels = 8;
  int in_channels = 4;
  int kernel = 3;

  void validate() const;
  std::string describe() const;  // "levels=2 base=8 in=4 kernel=3"
  static ArchSpec parse(const std::string& text);
  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

class UNet {
 public:
  UNet() = default;
  /// Kaiming-uniform weights, zero biases, from `seed`.
  UNet(const ArchSpec& spec, std::uint64_t seed);

  const ArchSpec& spec() const { return spec_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// x: N x in_channels x H x W with H, W divisible by 2^levels. Returns the
  /// sigmoid probability map N x 1 x H x W.
  nn::Var forward(nn::Tape& tape, nn::Var x);
  /// Pre-sigmoid output.
  nn::Var forward_logits(nn::Tape& tape, nn::Var x);
  nn::Tensor predict(const nn::Tensor& x) const;
  nn::Tensor predict_logits(const nn::Tensor& x) const;

 private:
  ArchSpec spec_;
  nn::ParamStore params_;
};

enum class ModelKind { unet, refiner };
enum class LabelKind { coarse, fine };
enum class Schedule { sequential, joint };
enum class LrSchedule { constant, cosine };

const char* to_string(ModelKind k);
const char* to_string(LabelKind k);
const char* to_string(Schedule s);
const char* to_string(LrSchedule s);
LrSchedule parse_lr_schedule(const std::string& s);
ModelKind parse_model_kind(const std::string& s);
LabelKind parse_label_kind(const std::string& s);
Schedule parse_schedule(const std::string& s);

struct TrainConfig {
  LabelKind labels = LabelKind::coarse;
  bool use_points = false;
  std::string points_tag;  // manifest scenario tag (or unique prefix)
  int epochs = 8;
  int stage2_epochs = -1;  // < 0: same as epochs
  int batch_size = 8;
  double learning_rate = 3e-3;
  LrSchedule lr_schedule = LrSchedule::cosine;  // per stage, over its optimizer steps
  nn::OptimKind optimizer = nn::OptimKind::adam;
  double weight_pos = 1.0;
  std::uint64_t seed = 42;
  Schedule schedule = Schedule::sequential;
  int levels = 2;
  int base_channels = 8;
  double point_sigma = 4.0;  // px; 0 feeds the raw point raster to stage 2

  void validate() const;
  /// Stable key=value rendering, used in checkpoints and cache keys.
  std::string describe() const;
};

struct EpochMetrics {
  int stage = 1;  // 1 or 2; joint training logs stage 2
  int epoch = 0;
  double loss = 0.0;
  double val_accuracy = 0.0;
  double val_miou = 0.0;
  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct Prediction {
  ProbabilityMask probability;
  BinaryMask mask;
};

/// A trained (or freshly initialized) model and its provenance; this is
/// what checkpoint files hold. Stage 2 predicts a correction to the stage-1
/// logits; its head starts at zero so an untrained refiner reproduces stage 1.
class Model {
 public:
  static Model unet(const ArchSpec& spec, std::uint64_t seed);
  /// stage2.in_channels must equal stage1.in_channels + 1 (+1 with points).
  static Model refiner(const ArchSpec& stage1, const ArchSpec& stage2, bool use_points, std::uint64_t seed);

  ModelKind kind() const { return kind_; }
  bool uses_points() const { return uses_points_; }
  int in_channels() const { return stage1_.spec().in_channels; }
  UNet& stage1() { return stage1_; }
  const UNet& stage1() const { return stage1_; }
  UNet* stage2() { return stage2_ ? &*stage2_ : nullptr; }
  const UNet* stage2() const { return stage2_ ? &*stage2_ : nullptr; }

  TrainConfig config;
  std::vector<EpochMetrics> history;
  std::uint64_t steps = 0;

  /// Stage-2 (or UNet) probability and its p >= threshold mask.
  Prediction infer(const MultispectralTile& tile, const BinaryMask* points, double threshold = 0.5) const;
  /// Stage-1 probability for a batch of images.
  nn::Tensor stage1_probability(const nn::Tensor& images) const;
  nn::Tensor predict(const nn::Tensor& images, const nn::Tensor* points) const;

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);
  std::string serialize() const;
  static Model deserialize(const std::string& bytes, const std::string& where = "checkpoint");

 private:
  ModelKind kind_ = ModelKind::unet;
  bool uses_points_ = false;
  UNet stage1_;
  std::optional<UNet> stage2_;
};

/// Point raster as a heat map: sum of Gaussians (zero padding) scaled so an
/// isolated point peaks at 1, clipped to 1. sigma == 0 returns the raster.
nn::Tensor encode_points(const nn::Tensor& raster, double sigma);

nn::Tensor tile_tensor(const MultispectralTile& tile);
nn::Tensor mask_tensor(const BinaryMask& mask);

/// Trained stage-1 networks keyed by everything that determines them, so
/// experiment grids do not retrain identical networks.
class StageCache {
 public:
  std::optional<std::pair<UNet, std::vector<EpochMetrics>>> find(const std::string& key) const;
  void store(const std::string& key, const UNet& net, const std::vector<EpochMetrics>& history);

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::pair<UNet, std::vector<EpochMetrics>>> entries_;
};

struct TrainHooks {
  StageCache* cache = nullptr;
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Trains a UNet or refiner on the manifest's train split; per-epoch
/// validation metrics are measured on the test split against fine masks.
Model train(const DatasetManifest& manifest, ModelKind kind, const TrainConfig& cfg, const TrainHooks& hooks = {});

}  // namespace s2c::model
