#pragma once

#include <cstdint>
#include <filesystem>
#include <list>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sslface/image.hpp"

namespace sslface {

/// A face image referenced by path, optionally mirrored left-right.
struct ImageRef {
  std::string path;
  bool mirrored = false;

  std::string key() const { return mirrored ? path + "#flip" : path; }
  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

struct FacePair {
  ImageRef a;
  ImageRef b;
  std::optional<bool> match;  // absent in unlabeled pools

  friend bool operator==(const FacePair&, const FacePair&) = default;
};

struct Fold {
  std::vector<FacePair> matched;
  std::vector<FacePair> mismatched;

  /// Matched pairs followed by mismatched pairs.
  std::vector<FacePair> pairs() const;
};

struct PairProtocol {
  std::vector<Fold> folds;
  std::size_t pair_count() const;
};

/// One line of a pairs file before path resolution.
struct PairEntry {
  std::string name_a;
  int index_a = 0;
  std::string name_b;
  int index_b = 0;
  bool match() const { return name_a == name_b; }
};

/// Identity-folder layout: root/<name>/<name>_<NNNN><ext>.
struct ImageLayout {
  std::filesystem::path root;
  std::vector<std::string> extensions{".png", ".ppm", ".pgm"};
  /// When false, paths are built with the first extension and not checked.
  bool check_exists = true;
};

std::filesystem::path identity_image_path(const std::filesystem::path& root, const std::string& name, int index,
                                          const std::string& ext);

/// Parses the pairs-protocol text format. Header "F N" declares F folds of N
/// matched and N mismatched pairs; a lone "N" is read as one fold. Matched
/// lines are "name i j", mismatched lines "name1 i name2 j". Throws ParseError
/// with the offending line, or DataError listing every unresolvable image.
PairProtocol parse_pairs_text(std::string_view text, const ImageLayout& layout);
PairProtocol parse_pairs_file(const std::filesystem::path& path, const ImageLayout& layout);

/// Inverse of parsing: folds[f] holds the matched entries then the mismatched.
std::string format_pairs_protocol(const std::vector<std::vector<PairEntry>>& folds);

/// Appends a mirrored copy of every pair (same label) after the originals.
std::vector<FacePair> augment_flip(const std::vector<FacePair>& pairs);

struct SplitPairs {
  std::vector<FacePair> train;
  std::vector<FacePair> test;
};

SplitPairs kfold_split(const PairProtocol& protocol, std::size_t held_out_fold);

struct LabeledRef {
  std::string identity;
  ImageRef image;
};

/// Every probe paired with every gallery image, then `n_random` mismatched
/// pairs drawn (seeded) from distinct identities of the combined set.
std::vector<FacePair> make_gallery_pairs(const std::vector<LabeledRef>& gallery, const std::vector<LabeledRef>& probes,
                                         std::size_t n_random, std::uint64_t seed);

/// Lists images of an identity-folder tree, sorted by identity then file name.
std::vector<LabeledRef> scan_identity_folders(const std::filesystem::path& root);

// ---- synthetic blob faces (test substrate, not a face model) ----

struct SyntheticSpec {
  int n_identities = 20;
  int images_per_identity = 10;
  double intra_class_noise = 4.0;  // sigma in gray levels
  std::uint64_t seed = 1;
  /// Total pairs, half matched and half mismatched. 0 = one per image.
  std::size_t n_pairs = 0;
  int image_size = 32;
};

struct SyntheticImage {
  std::string identity;
  int index = 0;  // 1-based, as in the identity-folder layout
  std::string path;
  RgbImage image;
};

struct SyntheticDataset {
  SyntheticSpec spec;
  std::vector<SyntheticImage> images;
  std::vector<PairEntry> entries;  // matched/mismatched interleaved
  std::vector<FacePair> pairs;     // same order as entries
};

SyntheticDataset make_synthetic(const SyntheticSpec& spec);

/// Writes images (PPM) into the identity-folder layout, a pairs file split
/// into `n_folds` folds, and manifest.json.
void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& out_dir, int n_folds);

/// Decoded-image cache shared by feature extraction. Inserted images are
/// pinned; images read from disk are evicted least-recently-used first.
class ImageStore {
 public:
  explicit ImageStore(std::size_t capacity = 4096) : capacity_(capacity) {}

  void insert(const std::string& path, RgbImage img);
  void insert(const SyntheticDataset& data);

  /// Decoded image with mirroring applied. Thread-safe.
  RgbImage load(const ImageRef& ref) const;

  std::size_t cached() const;

 private:
  struct Entry {
    RgbImage image;
    std::list<std::string>::iterator lru;
  };

  std::size_t capacity_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, RgbImage> pinned_;
  mutable std::unordered_map<std::string, Entry> cache_;
  mutable std::list<std::string> order_;
};

}  // namespace sslface
