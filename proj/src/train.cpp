#include "ssam/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace ssam::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTeacherKind = 1;
constexpr std::uint64_t kStudentKind = 2;

std::vector<std::uint64_t> rng_state(const Rng& rng) {
  std::stringstream ss;
  ss << rng;
  std::vector<std::uint64_t> out;
  for (std::uint64_t w; ss >> w;) out.push_back(w);
  return out;
}

void put_meta(Checkpoint& c, std::uint64_t kind, const TrainConfig& cfg, std::size_t epoch,
              const std::vector<std::string>& train_ids, const Rng* order) {
  c.put_u64("meta.kind", {kind});
  c.put_u64("meta.epoch", {epoch});
  c.put_u64("meta.config_hash", {cfg.hash()});
  std::vector<std::uint64_t> ids;
  for (const auto& id : train_ids) ids.push_back(id_hash(id));
  std::sort(ids.begin(), ids.end());
  c.put_u64("meta.train_ids", ids);
  if (order != nullptr) c.put_u64("meta.rng", rng_state(*order));
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[std::size_t(rng() % i)]);
  return order;
}

struct LoopResult {
  RunLog log;
  AdamW opt;
  double final_loss = 0;
  std::optional<Checkpoint> best;
  std::optional<metrics::MetricsReport> val;
};

using StepLoss = std::function<losses::LossBreakdown<float>(const std::vector<std::size_t>&)>;
using Validate = std::function<std::optional<metrics::MetricsReport>()>;
using Snapshot = std::function<Checkpoint(std::size_t epoch, const AdamW& opt, const Rng& order)>;

LoopResult run_loop(const std::string& stage, const StageConfig& sc, const losses::LossWeights& w, std::size_t n,
                    const ParamList<float>& params, const StepLoss& step_loss, const Validate& validate,
                    const Snapshot& snapshot, std::size_t eval_every, Rng& order_rng, const Progress& progress) {
  LoopResult r;
  r.opt.cfg = sc;
  const std::size_t per_epoch = (n + sc.batch - 1) / sc.batch;
  const std::size_t total_steps = per_epoch * sc.epochs;
  std::size_t step = 0;
  double best_miou = -1;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 1; epoch <= sc.epochs; ++epoch) {
    const auto order = shuffled(n, order_rng);
    EpochRow row;
    row.epoch = epoch;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * sc.batch, hi = std::min(n, lo + sc.batch);
      std::vector<std::size_t> idx(order.begin() + long(lo), order.begin() + long(hi));
      try {
        Graph<float> graph;
        auto rec = graph.record();
        auto lb = step_loss(idx);
        const double total = lb.total.item();
        if (!std::isfinite(total)) throw NumericError("loss is not finite");
        backward(graph, lb.total);
        r.opt.update(params, cosine_lr(sc.lr, step, total_steps));
        zero_grads(params);
        const double frac = double(hi - lo) / double(n);
        row.total += frac * total;
        row.bce += frac * w.lambda_bce * lb.bce;
        row.dice += frac * w.lambda_dice * lb.dice;
        row.sparse += frac * w.lambda_sparse * lb.sparse;
        row.topo += frac * w.lambda_topo * lb.topo;
        r.final_loss = total;
      } catch (const NumericError& e) {
        throw NumericError(stage + " epoch " + std::to_string(epoch) + " batch " + std::to_string(b + 1) + ": " +
                           e.what());
      }
      ++step;
    }
    const bool last = epoch == sc.epochs;
    if (last || (eval_every > 0 && epoch % eval_every == 0)) {
      row.val = validate();
      if (row.val && row.val->mIoU > best_miou) {
        best_miou = row.val->mIoU;
        r.best = snapshot(epoch, r.opt, order_rng);
      }
      if (last) r.val = row.val;
    }
    row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.log.rows.push_back(row);
    if (progress) progress(stage, row);
  }
  return r;
}

std::vector<std::string> entry_ids(const std::vector<data::ManifestEntry>& entries) {
  std::vector<std::string> ids;
  for (const auto& e : entries) ids.push_back(e.id);
  return ids;
}

}  // namespace

std::uint64_t id_hash(const std::string& id) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---- optimiser ----

void AdamW::update(const ParamList<float>& params, double lr) {
  if (m.empty()) {
    for (const auto& p : params) {
      m.emplace_back(p.tensor.numel(), 0.0f);
      v.emplace_back(p.tensor.numel(), 0.0f);
    }
  }
  if (m.size() != params.size()) throw ContractError("AdamW: parameter list changed between steps");
  ++steps;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(steps));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(steps));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<float> t = params[k].tensor;
    auto values = t.mutable_data();
    const bool has = t.has_grad();
    const auto g = t.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double gi = has ? double(g[i]) : 0.0;
      const double mi = cfg.beta1 * m[k][i] + (1 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[k][i] + (1 - cfg.beta2) * gi * gi;
      m[k][i] = float(mi);
      v[k][i] = float(vi);
      const double x = values[i];
      values[i] = float(x - lr * ((mi / c1) / (std::sqrt(vi / c2) + cfg.eps) + cfg.weight_decay * x));
    }
  }
}

void AdamW::save(Checkpoint& c, const ParamList<float>& params) const {
  c.put_u64("adam.steps", {steps});
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& shape = params[k].tensor.shape();
    const std::size_t n = params[k].tensor.numel();
    c.put("adam.m." + params[k].name, shape, m.empty() ? std::vector<float>(n, 0.0f) : m[k]);
    c.put("adam.v." + params[k].name, shape, v.empty() ? std::vector<float>(n, 0.0f) : v[k]);
  }
}

void AdamW::load(const Checkpoint& c, const ParamList<float>& params) {
  steps = c.get_u64("adam.steps").at(0);
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.push_back(c.at("adam.m." + p.name).values);
    v.push_back(c.at("adam.v." + p.name).values);
    if (m.back().size() != p.tensor.numel()) throw FormatError("optimizer moment size mismatch for " + p.name);
  }
}

double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * double(step) / double(total)));
}

// ---- teacher ----

ParamList<float> TeacherModel::trainable() const {
  ParamList<float> out;
  decoder.collect(out);
  adapter.collect(out);
  return out;
}

ParamList<float> TeacherModel::all() const {
  ParamList<float> out;
  encoder.collect(out);
  decoder.collect(out);
  adapter.collect(out);
  return out;
}

std::size_t TeacherModel::first_trainable_block() const {
  return adapter.injected_layers.empty() ? encoder.blocks.size() + 1 : adapter.injected_layers.front();
}

TeacherModel make_teacher(const TrainConfig& cfg) {
  cfg.validate();
  TeacherModel t;
  t.encoder = backbone::init_frozen_backbone<float>(cfg.backbone_seed, cfg.encoder);
  Rng rng(cfg.seed);
  t.decoder = backbone::MaskDecoder<float>::init(cfg.encoder.channels, rng);
  t.adapter = moe::AdapterState<float>::init(cfg.encoder.channels, cfg.injected_layers(), cfg.experts, rng);
  return t;
}

Tensor<float> teacher_prefix(const TeacherModel& t, const Tensor<float>& images) {
  NoGrad<float> ng;
  auto tokens = backbone::patch_embed(t.encoder, images);
  const std::size_t first = t.first_trainable_block();
  if (first > 1) tokens = backbone::run_blocks(t.encoder, tokens, 1, first - 1);
  return tokens.detach();
}

Tensor<float> teacher_head(const TeacherModel& t, const Tensor<float>& prefix,
                           std::vector<moe::RoutingRecord<float>>* records) {
  Tensor<float> tokens = prefix;
  const std::size_t first = t.first_trainable_block(), last = t.encoder.blocks.size();
  if (first <= last) tokens = backbone::run_blocks(t.encoder, tokens, first, last, &t.adapter, records);
  return backbone::decode_mask(tokens, t.decoder);
}

Tensor<float> teacher_logits(const TeacherModel& t, const Tensor<float>& images) {
  return teacher_head(t, teacher_prefix(t, images));
}

Checkpoint teacher_checkpoint(const TeacherModel& t, const TrainConfig& cfg, std::size_t epoch, const AdamW* opt,
                              const std::vector<std::string>& train_ids) {
  Checkpoint c;
  put_meta(c, kTeacherKind, cfg, epoch, train_ids, nullptr);
  const auto& e = t.encoder.config;
  c.put_u64("meta.encoder", {e.patch, e.channels, e.layers, e.heads, e.mlp_hidden});
  c.put_u64("meta.backbone_seed", {t.encoder.seed});
  c.put_u64("meta.injected", {t.adapter.injected_layers.begin(), t.adapter.injected_layers.end()});
  std::vector<std::uint64_t> kinds;
  for (auto k : cfg.experts) kinds.push_back(std::uint64_t(k));
  c.put_u64("meta.experts", kinds);
  c.put_params(t.all());
  if (opt != nullptr) opt->save(c, t.trainable());
  return c;
}

TeacherModel load_teacher(const Checkpoint& c) {
  if (c.get_u64("meta.kind").at(0) != kTeacherKind) throw FormatError("checkpoint is not a teacher");
  const auto enc = c.get_u64("meta.encoder");
  if (enc.size() != 5) throw FormatError("meta.encoder must hold 5 values");
  backbone::EncoderConfig ec{enc[0], enc[1], enc[2], enc[3], enc[4]};
  std::vector<std::size_t> injected;
  for (auto l : c.get_u64("meta.injected")) injected.push_back(std::size_t(l));
  std::vector<moe::ExpertKind> kinds;
  for (auto k : c.get_u64("meta.experts")) {
    if (k > 3) throw FormatError("meta.experts holds an unknown expert");
    kinds.push_back(moe::ExpertKind(k));
  }
  TeacherModel t;
  t.encoder = backbone::init_frozen_backbone<float>(c.get_u64("meta.backbone_seed").at(0), ec);
  Rng rng(0);
  t.decoder = backbone::MaskDecoder<float>::init(ec.channels, rng);
  t.adapter = moe::AdapterState<float>::init(ec.channels, injected, kinds, rng);
  c.load_params(t.all());
  return t;
}

TeacherRun train_teacher(const TrainConfig& cfg, const data::Manifest& manifest, const Progress& progress) {
  cfg.validate();
  const auto labeled = manifest.with(data::Provenance::Labeled);
  if (labeled.empty()) throw ContractError("train_teacher: the labeled set is empty");
  const auto train = data::load_entries(manifest, labeled, data::MaskSource::GroundTruth);
  const auto val_entries = manifest.with(data::Provenance::Val);
  const auto val = data::load_entries(manifest, val_entries, data::MaskSource::GroundTruth);

  TeacherRun run;
  run.model = make_teacher(cfg);
  const TeacherModel& model = run.model;
  run.encoder_checksum_before = model.encoder.checksum();
  const auto params = model.trainable();
  const Tensor<float> prefix = teacher_prefix(model, train.images);
  const Tensor<float> val_prefix = val.ids.empty() ? Tensor<float>() : teacher_prefix(model, val.images);

  Rng order(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  auto step_loss = [&](const std::vector<std::size_t>& idx) {
    std::vector<moe::RoutingRecord<float>> records;
    auto logits = teacher_head(model, gather_rows(prefix, idx), &records);
    auto target = gather_rows(train.masks, idx);
    Tensor<float> f, p;
    if (!records.empty()) {
      auto stats = moe::accumulate_routing_stats(records);
      f = stats.f;
      p = stats.P;
    }
    return losses::total_loss_stage1(logits, target, f, p, ops::sigmoid(logits), cfg.weights);
  };
  auto validate = [&]() -> std::optional<metrics::MetricsReport> {
    if (val.ids.empty()) return std::nullopt;
    data::Batchable cached{val.ids, val_prefix, val.masks};
    return evaluate_logits([&](const Tensor<float>& x) { return teacher_head(model, x); }, cached, cfg.threshold);
  };
  const auto ids = train.ids;
  auto snapshot = [&](std::size_t epoch, const AdamW& opt, const Rng&) {
    return teacher_checkpoint(model, cfg, epoch, &opt, ids);
  };
  auto loop = run_loop("teacher", cfg.stage1, cfg.weights, train.ids.size(), params, step_loss, validate, snapshot,
                       cfg.eval_every, order, progress);

  run.encoder_checksum_after = model.encoder.checksum();
  if (run.encoder_checksum_after != run.encoder_checksum_before) {
    throw ContractError("train_teacher: frozen encoder parameters changed");
  }
  ParamList<float> enc;
  model.encoder.collect(enc);
  for (const auto& p : enc)
    if (p.tensor.has_grad()) throw ContractError("train_teacher: gradient reached frozen " + p.name);

  run.checkpoint = teacher_checkpoint(model, cfg, cfg.stage1.epochs, &loop.opt, ids);
  run.checkpoint.put_u64("meta.rng", rng_state(order));
  run.best = std::move(loop.best);
  run.log = std::move(loop.log);
  run.val = loop.val;
  run.final_loss = loop.final_loss;
  return run;
}

data::Manifest generate_pseudo_labels(const TeacherModel& t, const data::Manifest& manifest,
                                      const fs::path& out_dir, double threshold) {
  std::vector<data::ManifestEntry> entries = manifest.with(data::Provenance::Labeled);
  const auto unlabeled = manifest.with(data::Provenance::Unlabeled);
  entries.insert(entries.end(), unlabeled.begin(), unlabeled.end());
  std::map<std::string, std::string> paths;
  NoGrad<float> ng;
  const std::size_t chunk = 32;
  for (std::size_t lo = 0; lo < entries.size(); lo += chunk) {
    std::vector<data::ManifestEntry> part(entries.begin() + long(lo),
                                          entries.begin() + long(std::min(entries.size(), lo + chunk)));
    const auto batch = data::load_entries(manifest, part, data::MaskSource::None);
    const auto prob = ops::sigmoid(teacher_logits(t, batch.images));
    const std::size_t h = batch.images.dim(2), w = batch.images.dim(3);
    const auto values = prob.data();
    for (std::size_t i = 0; i < part.size(); ++i) {
      std::vector<std::uint8_t> mask(h * w);
      for (std::size_t k = 0; k < h * w; ++k) mask[k] = values[i * h * w + k] > threshold ? 1 : 0;
      const fs::path file = out_dir / (part[i].id + ".pgm");
      data::write_mask(file, h, w, mask);
      const fs::path rel = manifest.root.empty() ? file : fs::proximate(file, manifest.root);
      paths[part[i].id] = rel.generic_string();
    }
  }
  return data::build_pseudo_dataset(manifest, paths);
}

// ---- student ----

Checkpoint student_checkpoint(const backbone::StudentModel<float>& s, const TrainConfig& cfg, std::size_t epoch,
                              const AdamW* opt, const std::vector<std::string>& train_ids) {
  Checkpoint c;
  put_meta(c, kStudentKind, cfg, epoch, train_ids, nullptr);
  ParamList<float> params;
  s.collect(params);
  c.put_params(params);
  if (opt != nullptr) opt->save(c, params);
  return c;
}

backbone::StudentModel<float> load_student(const Checkpoint& c) {
  if (c.get_u64("meta.kind").at(0) != kStudentKind) throw FormatError("checkpoint is not a student");
  Rng rng(0);
  auto s = backbone::StudentModel<float>::init(rng);
  ParamList<float> params;
  s.collect(params);
  c.load_params(params);
  return s;
}

StudentRun train_student(const TrainConfig& cfg, const data::Manifest& manifest, StudentSource source,
                         const data::Manifest* val_manifest, const Progress& progress) {
  cfg.validate();
  std::vector<data::ManifestEntry> entries;
  if (source == StudentSource::Pseudo) {
    for (const auto& e : manifest.entries) {
      if (e.provenance != data::Provenance::Pseudo) {
        throw ContractError("train_student: entry " + e.id + " is " + data::provenance_name(e.provenance) +
                            ", pseudo mode accepts pseudo entries only");
      }
    }
    entries = manifest.entries;
  } else {
    entries = manifest.with(data::Provenance::Labeled);
  }
  if (entries.empty()) throw ContractError("train_student: no training entries");
  const auto train = data::load_entries(
      manifest, entries, source == StudentSource::Pseudo ? data::MaskSource::Pseudo : data::MaskSource::GroundTruth);
  data::Batchable val;
  if (val_manifest != nullptr) {
    val = data::load_entries(*val_manifest, val_manifest->with(data::Provenance::Val), data::MaskSource::GroundTruth);
  }

  StudentRun run;
  Rng init_rng(cfg.seed);
  run.model = backbone::StudentModel<float>::init(init_rng);
  const auto& model = run.model;
  ParamList<float> params;
  model.collect(params);

  Rng order(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  auto step_loss = [&](const std::vector<std::size_t>& idx) {
    auto logits = backbone::student_forward(model, gather_rows(train.images, idx));
    return losses::total_loss_stage2(logits, gather_rows(train.masks, idx), cfg.weights);
  };
  auto validate = [&]() -> std::optional<metrics::MetricsReport> {
    if (val.ids.empty()) return std::nullopt;
    return evaluate_logits([&](const Tensor<float>& x) { return backbone::student_forward(model, x); }, val,
                           cfg.threshold);
  };
  const auto ids = train.ids;
  auto snapshot = [&](std::size_t epoch, const AdamW& opt, const Rng&) {
    return student_checkpoint(model, cfg, epoch, &opt, ids);
  };
  auto loop = run_loop("student", cfg.stage2, cfg.weights, train.ids.size(), params, step_loss, validate, snapshot,
                       cfg.eval_every, order, progress);
  run.checkpoint = student_checkpoint(model, cfg, cfg.stage2.epochs, &loop.opt, ids);
  run.checkpoint.put_u64("meta.rng", rng_state(order));
  run.best = std::move(loop.best);
  run.log = std::move(loop.log);
  run.val = loop.val;
  run.final_loss = loop.final_loss;
  return run;
}

// ---- evaluation ----

Tensor<float> gather_rows(const Tensor<float>& t, const std::vector<std::size_t>& idx) {
  Shape shape = t.shape();
  const std::size_t row = t.numel() / shape[0];
  std::vector<float> out;
  out.reserve(idx.size() * row);
  const auto src = t.data();
  for (std::size_t i : idx) {
    if (i >= shape[0]) throw ContractError("gather_rows: index out of range");
    out.insert(out.end(), src.begin() + long(i * row), src.begin() + long((i + 1) * row));
  }
  shape[0] = idx.size();
  return Tensor<float>(shape, std::move(out));
}

metrics::MetricsReport evaluate_logits(const LogitsFn& fn, const data::Batchable& d, double threshold,
                                       std::size_t batch) {
  if (d.ids.empty()) throw ContractError("evaluate: no samples");
  if (!d.masks.defined()) throw ContractError("evaluate: ground truth masks not loaded");
  NoGrad<float> ng;
  const std::size_t n = d.ids.size(), h = d.masks.dim(2), w = d.masks.dim(3);
  metrics::MetricCounts counts;
  for (std::size_t lo = 0; lo < n; lo += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = lo; i < std::min(n, lo + batch); ++i) idx.push_back(i);
    const auto prob = ops::sigmoid(fn(gather_rows(d.images, idx)));
    if (prob.numel() != idx.size() * h * w) throw DimensionError("evaluate: prediction size mismatch");
    const auto p = prob.data();
    const auto g = d.masks.data();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::vector<double> pd(p.begin() + long(k * h * w), p.begin() + long((k + 1) * h * w));
      std::vector<double> gd(g.begin() + long(idx[k] * h * w), g.begin() + long((idx[k] + 1) * h * w));
      counts.merge(metrics::image_counts(pd, gd, h, w, threshold));
    }
  }
  return metrics::finalize(counts, threshold);
}

metrics::MetricsReport evaluate_model(const Checkpoint& c, const data::Manifest& manifest, data::Provenance split,
                                      double threshold) {
  const auto entries = manifest.with(split);
  if (entries.empty()) throw ContractError("evaluate: split " + data::provenance_name(split) + " is empty");
  const auto trained = c.get_u64("meta.train_ids");
  const std::set<std::uint64_t> seen(trained.begin(), trained.end());
  for (const auto& e : entries) {
    if (seen.count(id_hash(e.id))) throw ContractError("evaluate: id " + e.id + " was used for training");
  }
  const auto d = data::load_entries(manifest, entries, data::MaskSource::GroundTruth);
  const auto kind = c.get_u64("meta.kind").at(0);
  if (kind == kTeacherKind) {
    const auto t = load_teacher(c);
    return evaluate_logits([&](const Tensor<float>& x) { return teacher_logits(t, x); }, d, threshold);
  }
  if (kind == kStudentKind) {
    const auto s = load_student(c);
    return evaluate_logits([&](const Tensor<float>& x) { return backbone::student_forward(s, x); }, d, threshold);
  }
  throw FormatError("checkpoint kind " + std::to_string(kind) + " is unknown");
}

// ---- logging ----

std::string RunLog::header() {
  return "epoch,L_total,L_bce,L_dice,L_sparse,L_topo,val_mIoU,val_nIoU,val_Pd,val_Fa,wall_s";
}

std::string RunLog::csv() const {
  std::ostringstream os;
  os << header() << '\n' << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.total << ',' << r.bce << ',' << r.dice << ',' << r.sparse << ',' << r.topo;
    if (r.val) {
      os << ',' << r.val->mIoU << ',' << r.val->nIoU << ',' << r.val->Pd << ',' << r.val->Fa;
    } else {
      os << ",,,,";
    }
    os << ',' << std::fixed << std::setprecision(3) << r.wall_s << std::defaultfloat << std::setprecision(10) << '\n';
  }
  return os.str();
}

void RunLog::write(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << csv();
}

}  // namespace ssam::pipeline
