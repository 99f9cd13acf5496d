#include "ssam/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace ssam::data {

namespace fs = std::filesystem;

void SceneParams::validate() const {
  if (size < 16) throw ConfigError("scene size must be at least 16");
  if (min_targets == 0 || min_targets > max_targets) throw ConfigError("invalid target count range");
  if (min_radius < 1 || min_radius > max_radius) throw ConfigError("invalid target radius range");
  if (!(min_intensity > 0 && min_intensity <= max_intensity && max_intensity <= 1)) {
    throw ConfigError("invalid target intensity range");
  }
  if (min_noise < 0 || min_noise > max_noise) throw ConfigError("invalid noise range");
  if (clutter < 0 || clutter > 0.3 + 1e-12) throw ConfigError("clutter amplitude must lie in [0, 0.3]");
  if (line_probability < 0 || line_probability > 1) throw ConfigError("line probability must lie in [0, 1]");
}

std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Labeled: return "labeled";
    case Provenance::Unlabeled: return "unlabeled";
    case Provenance::Pseudo: return "pseudo";
    case Provenance::Val: return "val";
  }
  return "?";
}

Provenance parse_provenance(const std::string& s) {
  if (s == "labeled") return Provenance::Labeled;
  if (s == "unlabeled") return Provenance::Unlabeled;
  if (s == "pseudo") return Provenance::Pseudo;
  if (s == "val") return Provenance::Val;
  throw FormatError("unknown provenance '" + s + "'");
}

namespace {

// Smooth lattice noise in [0, 1] with the given cell size.
std::vector<double> value_noise(std::size_t size, std::size_t cell, Rng& rng) {
  const std::size_t n = size / cell + 2;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> lattice(n * n);
  for (double& v : lattice) v = u(rng);
  auto smooth = [](double t) { return t * t * (3 - 2 * t); };
  std::vector<double> out(size * size);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      const double fy = double(i) / double(cell), fx = double(j) / double(cell);
      const std::size_t y0 = std::size_t(fy), x0 = std::size_t(fx);
      const double ty = smooth(fy - double(y0)), tx = smooth(fx - double(x0));
      const double a = lattice[y0 * n + x0], b = lattice[y0 * n + x0 + 1];
      const double c = lattice[(y0 + 1) * n + x0], d = lattice[(y0 + 1) * n + x0 + 1];
      out[i * size + j] = (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
    }
  return out;
}

}  // namespace

Sample generate_scene(const SceneParams& p, const std::string& id) {
  p.validate();
  Rng rng(p.seed);
  const std::size_t n = p.size;
  Sample s;
  s.id = id;
  s.height = s.width = n;
  s.image.assign(n * n, 0.0f);
  s.mask.assign(n * n, 0);

  auto coarse = value_noise(n, 16, rng);
  auto fine = value_noise(n, 8, rng);
  std::vector<double> img(n * n);
  for (std::size_t i = 0; i < n * n; ++i) img[i] = 0.1 + p.clutter * (0.65 * coarse[i] + 0.35 * fine[i]);

  std::uniform_int_distribution<std::size_t> count_dist(p.min_targets, p.max_targets);
  std::uniform_int_distribution<int> radius_dist(p.min_radius, p.max_radius);
  std::uniform_real_distribution<double> intensity_dist(p.min_intensity, p.max_intensity);
  const std::size_t count = count_dist(rng);
  for (std::size_t t = 0; t < count; ++t) {
    Target tg;
    tg.radius = radius_dist(rng);
    tg.intensity = intensity_dist(rng);
    std::uniform_int_distribution<int> pos(tg.radius, int(n) - 1 - tg.radius);
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      tg.y = pos(rng);
      tg.x = pos(rng);
      placed = std::all_of(s.targets.begin(), s.targets.end(), [&](const Target& o) {
        const double d = std::hypot(double(o.y - tg.y), double(o.x - tg.x));
        return d > double(o.radius + tg.radius + 2);
      });
    }
    if (!placed) throw GenerationError("generate_scene: could not place target " + std::to_string(t) + " of " + id);
    s.targets.push_back(tg);
  }

  std::bernoulli_distribution has_lines(p.line_probability);
  if (has_lines(rng)) {
    std::uniform_int_distribution<int> line_count(1, 2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int lines = line_count(rng);
    for (int k = 0; k < lines; ++k) {
      const double cy = u(rng) * double(n - 1), cx = u(rng) * double(n - 1);
      const double angle = u(rng) * 3.14159265358979;
      const double half = 8.0 + 12.0 * u(rng);
      const double level = 0.45 + 0.3 * u(rng);
      for (double t = -half; t <= half; t += 0.5) {
        const long y = std::lround(cy + t * std::sin(angle)), x = std::lround(cx + t * std::cos(angle));
        if (y < 0 || x < 0 || y >= long(n) || x >= long(n)) continue;
        const bool near_target = std::any_of(s.targets.begin(), s.targets.end(), [&](const Target& o) {
          return std::hypot(double(o.y - y), double(o.x - x)) <= double(o.radius + 3);
        });
        if (!near_target) img[std::size_t(y) * n + std::size_t(x)] = std::max(img[std::size_t(y) * n + std::size_t(x)], level);
      }
    }
  }

  for (const Target& tg : s.targets) {
    const double scale = double(tg.radius) + 0.5;
    for (int dy = -tg.radius; dy <= tg.radius; ++dy)
      for (int dx = -tg.radius; dx <= tg.radius; ++dx) {
        const int d2 = dy * dy + dx * dx;
        if (d2 > tg.radius * tg.radius) continue;
        const std::size_t idx = std::size_t(tg.y + dy) * n + std::size_t(tg.x + dx);
        img[idx] = std::max(img[idx], tg.intensity * (1.0 - 0.3 * double(d2) / (scale * scale)));
        s.mask[idx] = 1;
      }
  }

  std::uniform_real_distribution<double> sigma_dist(p.min_noise, p.max_noise);
  std::normal_distribution<double> noise(0.0, sigma_dist(rng));
  for (std::size_t i = 0; i < n * n; ++i) {
    const double v = p.max_noise > 0 ? img[i] + noise(rng) : img[i];
    s.image[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return s;
}

std::vector<Sample> generate_dataset(std::size_t count, std::uint64_t seed, SceneParams base) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(i)};
    std::uint64_t words[2];
    std::uint32_t raw[4];
    seq.generate(raw, raw + 4);
    words[0] = (std::uint64_t(raw[0]) << 32) | raw[1];
    words[1] = (std::uint64_t(raw[2]) << 32) | raw[3];
    base.seed = words[0] ^ words[1];
    std::ostringstream id;
    id << "scene_" << std::setw(4) << std::setfill('0') << i;
    out.push_back(generate_scene(base, id.str()));
  }
  return out;
}

// ---- PGM ----

Pgm parse_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) -> FormatError {
    return FormatError("PGM: " + what + " at byte " + std::to_string(pos));
  };
  auto skip_space = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::uint64_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) throw fail("expected a number");
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + std::uint64_t(bytes[pos] - '0');
      if (v > 1'000'000'000ULL) throw fail("number too large");
      ++pos;
    }
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw fail("missing P5 magic");
  pos = 2;
  Pgm pgm;
  pgm.width = number();
  pgm.height = number();
  const std::uint64_t maxval = number();
  if (pgm.width == 0 || pgm.height == 0) throw fail("zero image dimension");
  if (maxval == 0 || maxval > 65535) throw fail("maxval out of range");
  pgm.maxval = std::uint32_t(maxval);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw fail("expected whitespace after maxval");
  }
  ++pos;
  const std::size_t bpp = pgm.maxval > 255 ? 2 : 1;
  const std::size_t need = pgm.width * pgm.height * bpp;
  if (bytes.size() - pos < need) {
    pos = bytes.size();
    throw fail("truncated raster, expected " + std::to_string(need) + " bytes");
  }
  if (bytes.size() - pos > need) {
    pos += need;
    throw fail("trailing data after raster");
  }
  pgm.values.resize(pgm.width * pgm.height);
  for (std::size_t i = 0; i < pgm.values.size(); ++i) {
    std::uint32_t v = static_cast<unsigned char>(bytes[pos]);
    if (bpp == 2) v = (v << 8) | static_cast<unsigned char>(bytes[pos + 1]);
    if (v > pgm.maxval) throw fail("sample exceeds maxval");
    pgm.values[i] = std::uint16_t(v);
    pos += bpp;
  }
  return pgm;
}

Pgm read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_pgm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_pgm(const fs::path& path, const Pgm& pgm) {
  if (pgm.values.size() != pgm.width * pgm.height) throw DimensionError("write_pgm: raster size mismatch");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << pgm.width << ' ' << pgm.height << '\n' << pgm.maxval << '\n';
  std::string raster;
  raster.reserve(pgm.values.size() * 2);
  for (std::uint16_t v : pgm.values) {
    if (pgm.maxval > 255) raster.push_back(char(v >> 8));
    raster.push_back(char(v & 0xff));
  }
  out.write(raster.data(), std::streamsize(raster.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_image(const fs::path& path, std::size_t h, std::size_t w, const std::vector<float>& v) {
  Pgm pgm{w, h, 65535, {}};
  pgm.values.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    pgm.values[i] = std::uint16_t(std::lround(std::clamp(double(v[i]), 0.0, 1.0) * 65535.0));
  }
  write_pgm(path, pgm);
}

std::vector<float> read_image(const fs::path& path, std::size_t* h, std::size_t* w) {
  const Pgm pgm = read_pgm(path);
  if (h) *h = pgm.height;
  if (w) *w = pgm.width;
  std::vector<float> out(pgm.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = float(double(pgm.values[i]) / double(pgm.maxval));
  return out;
}

void write_mask(const fs::path& path, std::size_t h, std::size_t w, const std::vector<std::uint8_t>& m) {
  Pgm pgm{w, h, 255, {}};
  pgm.values.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) pgm.values[i] = m[i] ? 255 : 0;
  write_pgm(path, pgm);
}

std::vector<std::uint8_t> read_mask(const fs::path& path, std::size_t* h, std::size_t* w) {
  const Pgm pgm = read_pgm(path);
  if (h) *h = pgm.height;
  if (w) *w = pgm.width;
  std::vector<std::uint8_t> out(pgm.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (pgm.values[i] != 0 && pgm.values[i] != pgm.maxval) {
      throw FormatError(path.string() + ": mask value " + std::to_string(pgm.values[i]) + " is neither 0 nor maxval");
    }
    out[i] = pgm.values[i] ? 1 : 0;
  }
  return out;
}

void save_sample(const Sample& s, const fs::path& root) {
  write_image(root / "images" / (s.id + ".pgm"), s.height, s.width, s.image);
  write_mask(root / "masks" / (s.id + ".pgm"), s.height, s.width, s.mask);
}

Sample load_sample(const fs::path& image_path, const fs::path& mask_path, const std::string& id) {
  Sample s;
  s.id = id;
  s.image = read_image(image_path, &s.height, &s.width);
  std::size_t mh = 0, mw = 0;
  s.mask = read_mask(mask_path, &mh, &mw);
  if (mh != s.height || mw != s.width) throw FormatError(id + ": image and mask sizes differ");
  return s;
}

// ---- Manifest ----

fs::path Manifest::resolve(const std::string& p) const {
  fs::path path(p);
  return path.is_absolute() ? path : root / path;
}

std::vector<ManifestEntry> Manifest::with(Provenance p) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.provenance == p) out.push_back(e);
  return out;
}

std::size_t Manifest::count(Provenance p) const {
  return std::size_t(std::count_if(entries.begin(), entries.end(), [p](const auto& e) { return e.provenance == p; }));
}

std::string manifest_text(const Manifest& m) {
  std::ostringstream os;
  os << "#manifest split_seed=" << m.split_seed << " label_fraction=" << std::setprecision(17) << m.label_fraction
     << '\n';
  os << "id\timage\tmask\tprovenance\n";
  for (const auto& e : m.entries) {
    os << e.id << '\t' << e.image << '\t' << e.mask << '\t' << provenance_name(e.provenance) << '\n';
  }
  return os.str();
}

void write_manifest(const Manifest& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest_text(m);
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line) || line.rfind("#manifest", 0) != 0) {
    throw FormatError(path.string() + ": missing manifest header on line 1");
  }
  ++lineno;
  {
    std::istringstream hs(line.substr(9));
    std::string kv;
    while (hs >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw FormatError(path.string() + ": bad header field '" + kv + "'");
      const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
      if (key == "split_seed") m.split_seed = std::stoull(val);
      else if (key == "label_fraction") m.label_fraction = std::stod(val);
    }
  }
  if (!std::getline(in, line) || line != "id\timage\tmask\tprovenance") {
    throw FormatError(path.string() + ": missing column header on line 2");
  }
  ++lineno;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1) {
      cols.push_back(line.substr(start, tab - start));
    }
    cols.push_back(line.substr(start));
    if (cols.size() != 4) {
      throw FormatError(path.string() + ": line " + std::to_string(lineno) + " has " + std::to_string(cols.size()) +
                        " columns, expected 4");
    }
    if (!seen.insert(cols[0]).second) throw FormatError(path.string() + ": duplicate id " + cols[0]);
    m.entries.push_back({cols[0], cols[1], cols[2], parse_provenance(cols[3])});
  }
  return m;
}

Manifest make_splits(const std::vector<std::string>& ids, double label_fraction, std::uint64_t split_seed,
                     double val_fraction) {
  if (ids.empty()) throw ContractError("make_splits: no samples");
  if (!(label_fraction > 0 && label_fraction <= 1)) throw ConfigError("label fraction must lie in (0, 1]");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("validation fraction must lie in [0, 1)");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(split_seed);
  // Fisher-Yates, j = rng() % i
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = std::size_t(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  const std::size_t n = ids.size();
  const std::size_t n_val = std::size_t(std::llround(val_fraction * double(n)));
  const std::size_t n_train = n - n_val;
  const std::size_t n_lab = std::min(n_train, std::size_t(std::ceil(label_fraction * double(n_train) - 1e-9)));
  Manifest m;
  m.split_seed = split_seed;
  m.label_fraction = label_fraction;
  for (std::size_t k = 0; k < n; ++k) {
    const std::string& id = ids[order[k]];
    Provenance p = k < n_val ? Provenance::Val : (k < n_val + n_lab ? Provenance::Labeled : Provenance::Unlabeled);
    m.entries.push_back({id, "images/" + id + ".pgm", "masks/" + id + ".pgm", p});
  }
  return m;
}

Manifest build_pseudo_dataset(const Manifest& manifest, const std::map<std::string, std::string>& teacher_masks) {
  Manifest out;
  out.split_seed = manifest.split_seed;
  out.label_fraction = manifest.label_fraction;
  out.root = manifest.root;
  std::vector<std::string> missing;
  for (const auto& e : manifest.entries) {
    if (e.provenance != Provenance::Labeled && e.provenance != Provenance::Unlabeled) continue;
    auto it = teacher_masks.find(e.id);
    if (it == teacher_masks.end()) {
      missing.push_back(e.id);
      continue;
    }
    if (is_ground_truth_path(it->second)) throw ContractError("pseudo mask for " + e.id + " points at ground truth");
    out.entries.push_back({e.id, e.image, it->second, Provenance::Pseudo});
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size(); ++i) list += (i ? ", " : "") + missing[i];
    throw CompletenessError("missing teacher masks for " + std::to_string(missing.size()) + " ids: " + list);
  }
  return out;
}

bool is_ground_truth_path(const std::string& path) {
  const fs::path p(path);
  for (auto it = p.begin(); it != p.end(); ++it) {
    if (std::next(it) != p.end() && *it == "masks") return true;
  }
  return false;
}

Manifest rebase_manifest(const Manifest& m, const fs::path& new_root) {
  Manifest out = m;
  out.root = new_root;
  const fs::path base = fs::absolute(new_root.empty() ? fs::path(".") : new_root);
  auto move = [&](const std::string& p) { return fs::proximate(fs::absolute(m.resolve(p)), base).generic_string(); };
  for (auto& e : out.entries) {
    e.image = move(e.image);
    e.mask = move(e.mask);
  }
  return out;
}

Batchable load_entries(const Manifest& m, const std::vector<ManifestEntry>& entries, MaskSource source) {
  Batchable b;
  if (entries.empty()) return b;
  std::size_t h = 0, w = 0;
  std::vector<float> images, masks;
  for (const auto& e : entries) {
    if (source == MaskSource::Pseudo) {
      if (e.provenance != Provenance::Pseudo) {
        throw ContractError("pseudo mode: entry " + e.id + " has provenance " + provenance_name(e.provenance));
      }
      if (is_ground_truth_path(e.mask)) throw ContractError("pseudo mode: entry " + e.id + " points at a GT mask");
    }
    std::size_t ih = 0, iw = 0;
    std::vector<float> img;
    try {
      img = read_image(m.resolve(e.image), &ih, &iw);
    } catch (const IoError& err) {
      throw IoError("sample " + e.id + ": " + err.what());
    }
    if (b.ids.empty()) h = ih, w = iw;
    if (ih != h || iw != w) throw FormatError("sample " + e.id + ": image size differs from the first sample");
    images.insert(images.end(), img.begin(), img.end());
    if (source != MaskSource::None) {
      std::size_t mh = 0, mw = 0;
      auto mk = read_mask(m.resolve(e.mask), &mh, &mw);
      if (mh != h || mw != w) throw FormatError("sample " + e.id + ": mask size differs from image");
      for (auto v : mk) masks.push_back(float(v));
    }
    b.ids.push_back(e.id);
  }
  const std::size_t n = b.ids.size();
  b.images = Tensor<float>({n, 1, h, w}, std::move(images));
  if (source != MaskSource::None) b.masks = Tensor<float>({n, 1, h, w}, std::move(masks));
  return b;
}

}  // namespace ssam::data
