#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ssam/backbone.hpp"
#include "ssam/checkpoint.hpp"
#include "ssam/config.hpp"
#include "ssam/data.hpp"
#include "ssam/metrics.hpp"

namespace ssam::pipeline {

/// Decoupled weight decay Adam. Moments are kept per parameter in list order.
struct AdamW {
  StageConfig cfg;
  std::uint64_t steps = 0;
  std::vector<std::vector<float>> m, v;

  /// One update with learning rate lr; parameters without a gradient
  /// buffer are treated as having zero gradient.
  void update(const ParamList<float>& params, double lr);
  void save(Checkpoint& c, const ParamList<float>& params) const;
  void load(const Checkpoint& c, const ParamList<float>& params);
};

/// base * (1 + cos(pi * step / total)) / 2.
double cosine_lr(double base, std::size_t step, std::size_t total);

struct TeacherModel {
  backbone::FrozenEncoder<float> encoder;
  moe::AdapterState<float> adapter;
  backbone::MaskDecoder<float> decoder;

  /// Adapter and decoder.
  ParamList<float> trainable() const;
  /// Encoder, decoder, adapter in checkpoint order.
  ParamList<float> all() const;
  /// First block whose output can change during training (L + 1 without adapter).
  std::size_t first_trainable_block() const;
};

TeacherModel make_teacher(const TrainConfig& cfg);

/// Frozen part of the encoder: patch embedding and the blocks before the
/// first injected layer. Computed without recording.
Tensor<float> teacher_prefix(const TeacherModel& t, const Tensor<float>& images);
/// Remaining blocks, adapters and decoder on cached prefix tokens.
Tensor<float> teacher_head(const TeacherModel& t, const Tensor<float>& prefix,
                           std::vector<moe::RoutingRecord<float>>* records = nullptr);
Tensor<float> teacher_logits(const TeacherModel& t, const Tensor<float>& images);

struct EpochRow {
  std::size_t epoch = 0;
  // Weighted contributions; total is their sum.
  double total = 0, bce = 0, dice = 0, sparse = 0, topo = 0;
  std::optional<metrics::MetricsReport> val;
  double wall_s = 0;
};

struct RunLog {
  std::vector<EpochRow> rows;
  static std::string header();
  std::string csv() const;
  void write(const std::filesystem::path& path) const;
};

using Progress = std::function<void(const std::string& stage, const EpochRow& row)>;

struct TeacherRun {
  TeacherModel model;
  Checkpoint checkpoint;
  std::optional<Checkpoint> best;  // highest validation mIoU, when validated
  RunLog log;
  std::optional<metrics::MetricsReport> val;
  std::uint64_t encoder_checksum_before = 0, encoder_checksum_after = 0;
  double final_loss = 0;
};

/// Stage one over the labeled entries only; validates on val entries when
/// present. Throws ContractError for an empty labeled set and NumericError
/// naming epoch and batch for a non-finite loss.
TeacherRun train_teacher(const TrainConfig& cfg, const data::Manifest& manifest, const Progress& progress = {});

Checkpoint teacher_checkpoint(const TeacherModel& t, const TrainConfig& cfg, std::size_t epoch,
                              const AdamW* opt, const std::vector<std::string>& train_ids);
TeacherModel load_teacher(const Checkpoint& c);

/// Teacher inference over labeled and unlabeled entries, sigmoid > threshold,
/// masks written to out_dir/<id>.pgm. Returns the pseudo manifest rooted at
/// the input manifest's root.
data::Manifest generate_pseudo_labels(const TeacherModel& t, const data::Manifest& manifest,
                                      const std::filesystem::path& out_dir, double threshold = 0.5);

enum class StudentSource { Pseudo, GroundTruth };

struct StudentRun {
  backbone::StudentModel<float> model;
  Checkpoint checkpoint;
  std::optional<Checkpoint> best;
  RunLog log;
  std::optional<metrics::MetricsReport> val;
  double final_loss = 0;
};

/// Stage two from scratch. Pseudo: every entry must have pseudo provenance
/// and a non-GT mask path. GroundTruth: the labeled entries with GT masks.
/// val_manifest supplies validation entries when non-null.
StudentRun train_student(const TrainConfig& cfg, const data::Manifest& manifest, StudentSource source,
                         const data::Manifest* val_manifest = nullptr, const Progress& progress = {});

Checkpoint student_checkpoint(const backbone::StudentModel<float>& s, const TrainConfig& cfg, std::size_t epoch,
                              const AdamW* opt, const std::vector<std::string>& train_ids);
backbone::StudentModel<float> load_student(const Checkpoint& c);

using LogitsFn = std::function<Tensor<float>(const Tensor<float>&)>;

metrics::MetricsReport evaluate_logits(const LogitsFn& fn, const data::Batchable& data, double threshold,
                                       std::size_t batch = 16);

/// Evaluates a teacher or student checkpoint on one split of the manifest.
/// ContractError when any evaluated id was used for training.
metrics::MetricsReport evaluate_model(const Checkpoint& c, const data::Manifest& manifest, data::Provenance split,
                                      double threshold = 0.5);

/// Rows idx of the leading axis, copied.
Tensor<float> gather_rows(const Tensor<float>& t, const std::vector<std::size_t>& idx);

std::uint64_t id_hash(const std::string& id);

}  // namespace ssam::pipeline
