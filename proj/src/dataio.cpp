#include "sslface/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "sslface/error.hpp"
#include "sslface/imageio.hpp"
#include "sslface/random.hpp"

namespace sslface {
namespace {

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) out.emplace_back(line.substr(start, i - start));
  }
  return out;
}

std::optional<long> parse_int(const std::string& s) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string format_index(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return buf;
}

struct Resolver {
  const ImageLayout& layout;
  std::map<std::pair<std::string, int>, std::string> memo;
  std::set<std::string> missing;

  std::string resolve(const std::string& name, int index) {
    const auto key = std::make_pair(name, index);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::string found;
    if (!layout.check_exists) {
      found = identity_image_path(layout.root, name, index, layout.extensions.front()).string();
    } else {
      for (const auto& ext : layout.extensions) {
        const auto p = identity_image_path(layout.root, name, index, ext);
        if (std::filesystem::exists(p)) {
          found = p.string();
          break;
        }
      }
      if (found.empty()) {
        found = identity_image_path(layout.root, name, index, layout.extensions.front()).string();
        missing.insert(found);
      }
    }
    memo.emplace(key, found);
    return found;
  }
};

// Soft-edged ellipse mask: 1 inside, 0 outside, ~1 px transition.
double soft_ellipse(double r, double c, double cr, double cc, double ry, double rx) {
  const double d = std::sqrt(((r - cr) / ry) * ((r - cr) / ry) + ((c - cc) / rx) * ((c - cc) / rx));
  const double edge = (d - 1.0) * std::min(rx, ry);
  return 1.0 / (1.0 + std::exp(2.5 * edge));
}

struct BlobFace {
  double bg[3];
  double skin[3];
  double face_cr, face_cc, face_ry, face_rx;
  double eye_row, eye_half_gap, eye_ry, eye_rx, eye_shade;
  double nose_top, nose_bottom, nose_half_width, nose_shade;
  double mouth_row, mouth_half_width, mouth_half_height;
  double lip[3];
};

BlobFace draw_identity(Rng& rng, double scale) {
  BlobFace f{};
  const double bg = rng.uniform(20.0, 90.0);
  for (double& v : f.bg) v = bg + rng.uniform(-15.0, 15.0);
  f.skin[0] = rng.uniform(150.0, 235.0);
  f.skin[1] = f.skin[0] * rng.uniform(0.55, 0.85);
  f.skin[2] = f.skin[1] * rng.uniform(0.6, 0.9);
  f.face_cr = scale * rng.uniform(15.0, 17.0);
  f.face_cc = scale * rng.uniform(14.5, 17.5);
  f.face_ry = scale * rng.uniform(12.0, 15.0);
  f.face_rx = scale * rng.uniform(9.5, 12.5);
  f.eye_row = scale * rng.uniform(9.0, 13.0);
  f.eye_half_gap = scale * rng.uniform(3.5, 6.5);
  f.eye_ry = scale * rng.uniform(1.0, 2.2);
  f.eye_rx = scale * rng.uniform(1.5, 3.2);
  f.eye_shade = rng.uniform(0.15, 0.6);
  f.nose_top = f.eye_row + scale * rng.uniform(2.0, 4.0);
  f.nose_bottom = scale * rng.uniform(17.0, 21.0);
  f.nose_half_width = scale * rng.uniform(0.8, 2.0);
  f.nose_shade = rng.uniform(0.6, 0.9);
  f.mouth_row = std::max(f.nose_bottom + 2.0 * scale, scale * rng.uniform(21.5, 25.5));
  f.mouth_half_width = scale * rng.uniform(3.0, 7.0);
  f.mouth_half_height = scale * rng.uniform(0.6, 1.6);
  f.lip[0] = rng.uniform(110.0, 200.0);
  f.lip[1] = rng.uniform(30.0, 90.0);
  f.lip[2] = rng.uniform(30.0, 100.0);
  return f;
}

void render(const BlobFace& f, int size, double sigma, Rng& noise, RgbImage& out) {
  out = RgbImage(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double face = soft_ellipse(r, c, f.face_cr, f.face_cc, f.face_ry, f.face_rx);
      const double eye_l = soft_ellipse(r, c, f.eye_row, f.face_cc - f.eye_half_gap, f.eye_ry, f.eye_rx);
      const double eye_r = soft_ellipse(r, c, f.eye_row, f.face_cc + f.eye_half_gap, f.eye_ry, f.eye_rx);
      const double nose_mid = 0.5 * (f.nose_top + f.nose_bottom);
      const double nose = soft_ellipse(r, c, nose_mid, f.face_cc, 0.5 * (f.nose_bottom - f.nose_top), f.nose_half_width);
      const double mouth = soft_ellipse(r, c, f.mouth_row, f.face_cc, f.mouth_half_height, f.mouth_half_width);
      for (int ch = 0; ch < 3; ++ch) {
        double v = f.skin[ch];
        v *= 1.0 - (1.0 - f.nose_shade) * nose;
        v = v * (1.0 - mouth) + f.lip[ch] * mouth;
        v *= 1.0 - (1.0 - f.eye_shade) * std::max(eye_l, eye_r);
        v = face * v + (1.0 - face) * f.bg[ch];
        if (sigma > 0.0) v += sigma * noise.normal();
        out.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
}

std::string identity_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "id%03d", i);
  return buf;
}

}  // namespace

std::vector<FacePair> Fold::pairs() const {
  std::vector<FacePair> out = matched;
  out.insert(out.end(), mismatched.begin(), mismatched.end());
  return out;
}

std::size_t PairProtocol::pair_count() const {
  std::size_t n = 0;
  for (const auto& f : folds) n += f.matched.size() + f.mismatched.size();
  return n;
}

std::filesystem::path identity_image_path(const std::filesystem::path& root, const std::string& name, int index,
                                          const std::string& ext) {
  return root / name / (name + "_" + format_index(index) + ext);
}

PairProtocol parse_pairs_text(std::string_view text, const ImageLayout& layout) {
  std::vector<std::pair<std::size_t, std::string_view>> lines;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (line.find_first_not_of(" \t") != std::string_view::npos) lines.emplace_back(line_no, line);
    if (end == text.size()) break;
    pos = end + 1;
  }
  if (lines.empty()) throw ParseError(1, "empty pairs file");

  const auto header = split_ws(lines.front().second);
  std::size_t n_folds = 1;
  std::size_t per_fold = 0;
  if (header.size() == 1 || header.size() == 2) {
    const auto a = parse_int(header[0]);
    const auto b = header.size() == 2 ? parse_int(header[1]) : std::optional<long>(0);
    if (!a || !b || *a < 1 || (header.size() == 2 && *b < 1)) throw ParseError(lines.front().first, "bad header");
    if (header.size() == 2) {
      n_folds = static_cast<std::size_t>(*a);
      per_fold = static_cast<std::size_t>(*b);
    } else {
      per_fold = static_cast<std::size_t>(*a);
    }
  } else {
    throw ParseError(lines.front().first, "header must be \"<folds> <pairs per fold>\"");
  }

  const std::size_t expected = n_folds * per_fold * 2;
  if (lines.size() - 1 != expected) {
    const std::size_t where = lines.size() - 1 < expected ? lines.back().first + 1 : lines[expected + 1].first;
    throw ParseError(where, "expected " + std::to_string(expected) + " pair lines, found " +
                                std::to_string(lines.size() - 1));
  }

  Resolver resolver{layout, {}, {}};
  PairProtocol protocol;
  protocol.folds.resize(n_folds);
  std::size_t li = 1;
  for (std::size_t f = 0; f < n_folds; ++f) {
    for (int kind = 0; kind < 2; ++kind) {
      for (std::size_t k = 0; k < per_fold; ++k, ++li) {
        const auto [num, line] = lines[li];
        const auto tok = split_ws(line);
        PairEntry e;
        if (kind == 0) {
          if (tok.size() != 3) throw ParseError(num, "matched line must be \"name i j\"");
          const auto i = parse_int(tok[1]);
          const auto j = parse_int(tok[2]);
          if (!i || !j || *i < 1 || *j < 1) throw ParseError(num, "image indices must be positive integers");
          e = {tok[0], static_cast<int>(*i), tok[0], static_cast<int>(*j)};
        } else {
          if (tok.size() != 4) throw ParseError(num, "mismatched line must be \"name1 i name2 j\"");
          const auto i = parse_int(tok[1]);
          const auto j = parse_int(tok[3]);
          if (!i || !j || *i < 1 || *j < 1) throw ParseError(num, "image indices must be positive integers");
          e = {tok[0], static_cast<int>(*i), tok[2], static_cast<int>(*j)};
        }
        FacePair p{{resolver.resolve(e.name_a, e.index_a)}, {resolver.resolve(e.name_b, e.index_b)}, kind == 0};
        (kind == 0 ? protocol.folds[f].matched : protocol.folds[f].mismatched).push_back(std::move(p));
      }
    }
  }

  if (!resolver.missing.empty()) {
    std::ostringstream msg;
    msg << resolver.missing.size() << " image(s) not found:";
    std::size_t shown = 0;
    for (const auto& m : resolver.missing) {
      if (shown++ == 20) {
        msg << " ...";
        break;
      }
      msg << ' ' << m;
    }
    throw DataError(msg.str());
  }
  return protocol;
}

PairProtocol parse_pairs_file(const std::filesystem::path& path, const ImageLayout& layout) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open pairs file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_pairs_text(ss.str(), layout);
}

std::string format_pairs_protocol(const std::vector<std::vector<PairEntry>>& folds) {
  if (folds.empty()) throw InvalidInput("format_pairs_protocol: no folds");
  std::size_t per_fold = 0;
  for (const auto& e : folds.front()) per_fold += e.match() ? 1 : 0;
  std::ostringstream out;
  out << folds.size() << '\t' << per_fold << '\n';
  for (const auto& fold : folds) {
    std::size_t matched = 0;
    for (const auto& e : fold) matched += e.match() ? 1 : 0;
    if (matched != per_fold || fold.size() != 2 * per_fold) {
      throw InvalidInput("format_pairs_protocol: folds must hold equal matched and mismatched counts");
    }
    for (const auto& e : fold) {
      if (e.match()) out << e.name_a << '\t' << e.index_a << '\t' << e.index_b << '\n';
    }
    for (const auto& e : fold) {
      if (!e.match()) out << e.name_a << '\t' << e.index_a << '\t' << e.name_b << '\t' << e.index_b << '\n';
    }
  }
  return out.str();
}

std::vector<FacePair> augment_flip(const std::vector<FacePair>& pairs) {
  std::vector<FacePair> out = pairs;
  out.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    FacePair f = p;
    f.a.mirrored = !f.a.mirrored;
    f.b.mirrored = !f.b.mirrored;
    out.push_back(std::move(f));
  }
  return out;
}

SplitPairs kfold_split(const PairProtocol& protocol, std::size_t held_out_fold) {
  if (protocol.folds.size() < 2) throw InvalidInput("kfold_split: need at least two folds");
  if (held_out_fold >= protocol.folds.size()) {
    throw InvalidInput("kfold_split: fold " + std::to_string(held_out_fold) + " out of range");
  }
  SplitPairs split;
  for (std::size_t f = 0; f < protocol.folds.size(); ++f) {
    auto pairs = protocol.folds[f].pairs();
    auto& dst = f == held_out_fold ? split.test : split.train;
    dst.insert(dst.end(), pairs.begin(), pairs.end());
  }
  return split;
}

std::vector<FacePair> make_gallery_pairs(const std::vector<LabeledRef>& gallery, const std::vector<LabeledRef>& probes,
                                         std::size_t n_random, std::uint64_t seed) {
  std::vector<FacePair> out;
  out.reserve(gallery.size() * probes.size() + n_random);
  for (const auto& p : probes) {
    for (const auto& g : gallery) out.push_back({p.image, g.image, p.identity == g.identity});
  }
  if (n_random == 0) return out;

  std::vector<LabeledRef> all = gallery;
  all.insert(all.end(), probes.begin(), probes.end());
  std::set<std::string> identities;
  for (const auto& r : all) identities.insert(r.identity);
  if (identities.size() < 2) throw InvalidInput("make_gallery_pairs: random mismatches need two identities");

  Rng rng(seed);
  while (n_random > 0) {
    const auto& x = all[rng.below(all.size())];
    const auto& y = all[rng.below(all.size())];
    if (x.identity == y.identity) continue;
    out.push_back({x.image, y.image, false});
    --n_random;
  }
  return out;
}

std::vector<LabeledRef> scan_identity_folders(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw DataError("not a directory: " + root.string());
  std::vector<LabeledRef> out;
  for (const auto& dir : std::filesystem::directory_iterator(root)) {
    if (!dir.is_directory()) continue;
    const std::string name = dir.path().filename().string();
    for (const auto& file : std::filesystem::directory_iterator(dir.path())) {
      const std::string ext = file.path().extension().string();
      if (!file.is_regular_file() || (ext != ".png" && ext != ".ppm" && ext != ".pgm")) continue;
      out.push_back({name, {file.path().string()}});
    }
  }
  std::sort(out.begin(), out.end(), [](const LabeledRef& a, const LabeledRef& b) {
    return std::tie(a.identity, a.image.path) < std::tie(b.identity, b.image.path);
  });
  return out;
}

SyntheticDataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.n_identities < 1 || spec.images_per_identity < 1) throw InvalidInput("synthetic: counts must be >= 1");
  if (!(spec.intra_class_noise >= 0.0)) throw InvalidInput("synthetic: noise sigma must be >= 0");
  if (spec.image_size < 8) throw InvalidInput("synthetic: image size must be >= 8");

  SyntheticDataset data;
  data.spec = spec;
  Rng shape_rng(mix64(spec.seed));
  Rng noise_rng(mix64(spec.seed ^ 0x6e6f697365ULL));
  const double scale = spec.image_size / 32.0;
  for (int id = 0; id < spec.n_identities; ++id) {
    const BlobFace face = draw_identity(shape_rng, scale);
    const std::string name = identity_name(id);
    for (int k = 1; k <= spec.images_per_identity; ++k) {
      SyntheticImage img;
      img.identity = name;
      img.index = k;
      img.path = (std::filesystem::path(name) / (name + "_" + format_index(k) + ".ppm")).string();
      render(face, spec.image_size, spec.intra_class_noise, noise_rng, img.image);
      data.images.push_back(std::move(img));
    }
  }

  const std::size_t total = spec.n_pairs > 0 ? spec.n_pairs
                                             : static_cast<std::size_t>(spec.n_identities) * spec.images_per_identity;
  const std::size_t half = total / 2;
  if (half > 0 && spec.images_per_identity < 2) throw InvalidInput("synthetic: matched pairs need >= 2 images per identity");
  if (half > 0 && spec.n_identities < 2) throw InvalidInput("synthetic: mismatched pairs need >= 2 identities");

  Rng pair_rng(mix64(spec.seed ^ 0x7061697273ULL));
  const auto n_id = static_cast<std::uint64_t>(spec.n_identities);
  const auto n_img = static_cast<std::uint64_t>(spec.images_per_identity);
  for (std::size_t k = 0; k < half; ++k) {
    const int id = static_cast<int>(pair_rng.below(n_id));
    const int i = static_cast<int>(pair_rng.below(n_img)) + 1;
    int j = static_cast<int>(pair_rng.below(n_img - 1)) + 1;
    if (j >= i) ++j;
    data.entries.push_back({identity_name(id), i, identity_name(id), j});

    const int a = static_cast<int>(pair_rng.below(n_id));
    int b = static_cast<int>(pair_rng.below(n_id - 1));
    if (b >= a) ++b;
    data.entries.push_back({identity_name(a), static_cast<int>(pair_rng.below(n_img)) + 1, identity_name(b),
                            static_cast<int>(pair_rng.below(n_img)) + 1});
  }
  for (const auto& e : data.entries) {
    auto path_of = [](const std::string& n, int idx) {
      return (std::filesystem::path(n) / (n + "_" + format_index(idx) + ".ppm")).string();
    };
    data.pairs.push_back({{path_of(e.name_a, e.index_a)}, {path_of(e.name_b, e.index_b)}, e.match()});
  }
  return data;
}

void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& out_dir, int n_folds) {
  if (n_folds < 1) throw InvalidInput("write_synthetic: need at least one fold");
  std::filesystem::create_directories(out_dir);
  nlohmann::json manifest;
  manifest["generator"] = "blob-faces";
  manifest["seed"] = data.spec.seed;
  manifest["n_identities"] = data.spec.n_identities;
  manifest["images_per_identity"] = data.spec.images_per_identity;
  manifest["intra_class_noise"] = data.spec.intra_class_noise;
  manifest["image_size"] = data.spec.image_size;
  manifest["images"] = nlohmann::json::array();
  std::set<std::string> identities;
  for (const auto& img : data.images) {
    std::filesystem::create_directories(out_dir / img.identity);
    write_ppm(out_dir / img.path, img.image);
    identities.insert(img.identity);
    manifest["images"].push_back({{"identity", img.identity}, {"index", img.index}, {"path", img.path}});
  }
  manifest["identities"] = identities;

  std::vector<PairEntry> matched, mismatched;
  for (const auto& e : data.entries) (e.match() ? matched : mismatched).push_back(e);
  const std::size_t per_fold = std::min(matched.size(), mismatched.size()) / static_cast<std::size_t>(n_folds);
  std::vector<std::vector<PairEntry>> folds(n_folds);
  for (int f = 0; f < n_folds; ++f) {
    for (std::size_t k = 0; k < per_fold; ++k) folds[f].push_back(matched[f * per_fold + k]);
    for (std::size_t k = 0; k < per_fold; ++k) folds[f].push_back(mismatched[f * per_fold + k]);
  }
  if (per_fold > 0) {
    std::ofstream pairs(out_dir / "pairs.txt", std::ios::binary);
    pairs << format_pairs_protocol(folds);
    manifest["pairs_file"] = "pairs.txt";
  }
  manifest["folds"] = n_folds;
  manifest["pairs_per_fold"] = per_fold;
  std::ofstream(out_dir / "manifest.json") << manifest.dump(2) << '\n';
}

void ImageStore::insert(const std::string& path, RgbImage img) {
  std::lock_guard lock(mu_);
  pinned_[path] = std::move(img);
}

void ImageStore::insert(const SyntheticDataset& data) {
  for (const auto& img : data.images) insert(img.path, img.image);
}

RgbImage ImageStore::load(const ImageRef& ref) const {
  RgbImage img;
  {
    std::lock_guard lock(mu_);
    if (auto it = pinned_.find(ref.path); it != pinned_.end()) {
      img = it->second;
    } else if (auto c = cache_.find(ref.path); c != cache_.end()) {
      order_.splice(order_.begin(), order_, c->second.lru);
      img = c->second.image;
    }
  }
  if (img.empty()) {
    img = read_image(ref.path);
    std::lock_guard lock(mu_);
    if (capacity_ > 0 && cache_.find(ref.path) == cache_.end()) {
      order_.push_front(ref.path);
      cache_.emplace(ref.path, Entry{img, order_.begin()});
      while (cache_.size() > capacity_) {
        cache_.erase(order_.back());
        order_.pop_back();
      }
    }
  }
  return ref.mirrored ? flip_horizontal(img) : img;
}

std::size_t ImageStore::cached() const {
  std::lock_guard lock(mu_);
  return cache_.size();
}

}  // namespace sslface
