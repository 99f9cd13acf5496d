#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ssam/params.hpp"

namespace ssam::data {

/// Target placement failed after the attempt budget.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Some ids lack a required file.
class CompletenessError : public Error {
 public:
  using Error::Error;
};

struct SceneParams {
  std::size_t size = 64;
  std::size_t min_targets = 1, max_targets = 3;
  int min_radius = 1, max_radius = 3;
  double min_intensity = 0.6, max_intensity = 1.0;
  double min_noise = 0.02, max_noise = 0.08;
  double clutter = 0.3;            // amplitude of the smooth background above 0.1
  double line_probability = 0.5;   // chance of bright 1-px line structures
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Provenance { Labeled, Unlabeled, Pseudo, Val };

std::string provenance_name(Provenance p);
Provenance parse_provenance(const std::string& s);

struct Target {
  int y = 0, x = 0, radius = 0;
  double intensity = 0;
};

struct Sample {
  std::string id;
  std::size_t height = 0, width = 0;
  std::vector<float> image;         // row-major, values in [0, 1]
  std::vector<std::uint8_t> mask;   // 0 or 1
  std::vector<Target> targets;
  Provenance provenance = Provenance::Unlabeled;
};

/// Deterministic scene: smooth clutter, Gaussian noise, optional bright
/// lines kept away from targets, and 1-3 non-overlapping disk targets whose
/// profile peaks at the centre. Throws GenerationError when the targets
/// cannot be placed within 100 attempts each.
Sample generate_scene(const SceneParams& p, const std::string& id = "scene");

/// count scenes named scene_0000.. with per-scene seeds derived from `seed`.
std::vector<Sample> generate_dataset(std::size_t count, std::uint64_t seed, SceneParams base = {});

// ---- PGM ----

struct Pgm {
  std::size_t width = 0, height = 0;
  std::uint32_t maxval = 0;
  std::vector<std::uint16_t> values;
};

/// Reads binary P5. Malformed or truncated input throws FormatError naming the byte offset.
Pgm read_pgm(const std::filesystem::path& path);
Pgm parse_pgm(const std::string& bytes);
void write_pgm(const std::filesystem::path& path, const Pgm& pgm);

/// 16-bit big-endian, value = round(65535 v).
void write_image(const std::filesystem::path& path, std::size_t h, std::size_t w, const std::vector<float>& v);
std::vector<float> read_image(const std::filesystem::path& path, std::size_t* h = nullptr, std::size_t* w = nullptr);
/// 8-bit, values 0/255.
void write_mask(const std::filesystem::path& path, std::size_t h, std::size_t w, const std::vector<std::uint8_t>& m);
std::vector<std::uint8_t> read_mask(const std::filesystem::path& path, std::size_t* h = nullptr,
                                    std::size_t* w = nullptr);

/// Writes root/images/<id>.pgm and root/masks/<id>.pgm.
void save_sample(const Sample& s, const std::filesystem::path& root);
Sample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                   const std::string& id);

// ---- Manifest ----

struct ManifestEntry {
  std::string id;
  std::string image;  // relative to the manifest's directory unless absolute
  std::string mask;
  Provenance provenance = Provenance::Unlabeled;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t split_seed = 0;
  double label_fraction = 0;
  std::filesystem::path root;  // directory the relative paths resolve against

  std::filesystem::path resolve(const std::string& p) const;
  std::vector<ManifestEntry> with(Provenance p) const;
  std::size_t count(Provenance p) const;
};

std::string manifest_text(const Manifest& m);
void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

/// Shuffles ids with split_seed. The first round(val_fraction N) become
/// validation; of the rest, the first ceil(label_fraction M) are labeled and
/// the remainder unlabeled. Paths follow the images/ and masks/ layout.
Manifest make_splits(const std::vector<std::string>& ids, double label_fraction, std::uint64_t split_seed,
                     double val_fraction = 0.0);

/// Manifest over every labeled and unlabeled id with provenance pseudo and
/// the given teacher mask paths. Throws CompletenessError listing missing ids.
Manifest build_pseudo_dataset(const Manifest& manifest, const std::map<std::string, std::string>& teacher_masks);

/// True when any directory component of `path` is "masks", the ground
/// truth folder.
bool is_ground_truth_path(const std::string& path);

/// Same entries with paths rewritten relative to new_root.
Manifest rebase_manifest(const Manifest& m, const std::filesystem::path& new_root);

// ---- Tensors ----

struct Batchable {
  std::vector<std::string> ids;
  Tensor<float> images;  // (N, 1, H, W)
  Tensor<float> masks;   // (N, 1, H, W), 0/1; undefined when not loaded
};

enum class MaskSource { None, GroundTruth, Pseudo };

/// Loads the given entries. MaskSource::Pseudo rejects any entry whose
/// provenance is not pseudo or whose mask path points into masks/.
Batchable load_entries(const Manifest& m, const std::vector<ManifestEntry>& entries, MaskSource source);

}  // namespace ssam::data
