#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iars/image.hpp"
#include "iars/synth.hpp"
#include "iars/tensor.hpp"

namespace iars {

struct ManifestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ManifestRecord {
  std::string image;
  std::string mask;
  std::string split;  // train | val | test
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  std::vector<ManifestRecord> split(const std::string& name) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
      if (r.split == name) out.push_back(r);
    return out;
  }
};

inline bool valid_split_name(const std::string& s) {
  return s == "train" || s == "val" || s == "test";
}

// Manifest format: JSON-lines, one {"image","mask","split"} object per line.
// Paths are resolved relative to the manifest's directory when not absolute.
inline DatasetManifest load_manifest(const std::string& path, bool check_files = true) {
  std::ifstream f(path);
  if (!f) throw ManifestError("cannot open manifest " + path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  DatasetManifest man;
  std::map<std::string, std::string> split_of;  // image path -> split, for disjointness
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ManifestError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("image") || !j.contains("mask") || !j.contains("split"))
      throw ManifestError(path + ":" + std::to_string(lineno) +
                          ": record needs image, mask and split fields");
    ManifestRecord r{j["image"].get<std::string>(), j["mask"].get<std::string>(),
                     j["split"].get<std::string>()};
    if (!valid_split_name(r.split))
      throw ManifestError(path + ":" + std::to_string(lineno) + ": unknown split '" + r.split +
                          "'");
    auto resolve = [&](const std::string& p) {
      std::filesystem::path fp(p);
      return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    r.image = resolve(r.image);
    r.mask = resolve(r.mask);
    auto [it, fresh] = split_of.emplace(r.image, r.split);
    if (!fresh && it->second != r.split)
      throw ManifestError(path + ":" + std::to_string(lineno) + ": " + r.image +
                          " appears in splits '" + it->second + "' and '" + r.split + "'");
    if (check_files) {
      if (!std::filesystem::exists(r.image))
        throw ManifestError(path + ":" + std::to_string(lineno) + ": missing file " + r.image);
      if (!std::filesystem::exists(r.mask))
        throw ManifestError(path + ":" + std::to_string(lineno) + ": missing file " + r.mask);
    }
    man.records.push_back(std::move(r));
  }
  return man;
}

inline void save_manifest(const std::string& path, const DatasetManifest& man) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ManifestError("cannot write manifest " + path);
  for (const auto& r : man.records) {
    nlohmann::json j{{"image", r.image}, {"mask", r.mask}, {"split", r.split}};
    f << j.dump() << "\n";
  }
}

// Writes samples as img_NNNN.ppm / msk_NNNN.pgm under dir with an index-order
// train/val/test partition, and returns the saved manifest (relative paths).
inline DatasetManifest save_dataset(const std::string& dir, const std::vector<Sample>& samples,
                                    double train_frac = 0.8, double val_frac = 0.1) {
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0)
    throw std::invalid_argument("save_dataset: bad split fractions");
  std::filesystem::create_directories(dir);
  const int n = static_cast<int>(samples.size());
  const int n_train = static_cast<int>(train_frac * n);
  const int n_val = static_cast<int>(val_frac * n);
  DatasetManifest man;
  char buf[32];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%04d", i);
    const std::string img = std::string("img_") + buf + ".ppm";
    const std::string msk = std::string("msk_") + buf + ".pgm";
    write_ppm((std::filesystem::path(dir) / img).string(), samples[static_cast<std::size_t>(i)].image);
    write_pgm((std::filesystem::path(dir) / msk).string(), samples[static_cast<std::size_t>(i)].mask);
    const std::string split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    man.records.push_back({img, msk, split});
  }
  save_manifest((std::filesystem::path(dir) / "manifest.jsonl").string(), man);
  return man;
}

inline std::vector<Sample> load_samples(const std::vector<ManifestRecord>& records) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Sample s{read_ppm(r.image), read_pgm(r.mask)};
    if (s.image.height != s.mask.height || s.image.width != s.mask.width)
      throw ManifestError("image/mask dims differ for " + r.image);
    out.push_back(std::move(s));
  }
  return out;
}

// Copies one image into slot n of a (N,3,H,W) batch tensor, planar layout.
template <typename T>
void fill_image(Tensor<T>& batch, int n, const RgbImage& im) {
  const int H = batch.dim(2), W = batch.dim(3);
  if (batch.dim(1) != 3 || im.height != H || im.width != W)
    throw std::invalid_argument("fill_image: batch " + shape_str(batch.shape()) +
                                " does not fit image " + std::to_string(im.height) + "x" +
                                std::to_string(im.width));
  for (int c = 0; c < 3; ++c) {
    T* dst = batch.data().data() + ((static_cast<std::size_t>(n) * 3 + c) * H) * W;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) dst[y * W + x] = static_cast<T>(im.at(y, x, c));
  }
}

// Copies one mask into slot n of a (N,1,H,W) target tensor as 0/1 values.
template <typename T>
void fill_mask(Tensor<T>& batch, int n, const BinaryMask& m) {
  const int H = batch.dim(2), W = batch.dim(3);
  if (batch.dim(1) != 1 || m.height != H || m.width != W)
    throw std::invalid_argument("fill_mask: batch " + shape_str(batch.shape()) +
                                " does not fit mask " + std::to_string(m.height) + "x" +
                                std::to_string(m.width));
  T* dst = batch.data().data() + static_cast<std::size_t>(n) * H * W;
  for (std::size_t i = 0; i < m.data.size(); ++i) dst[i] = m.data[i] ? T(1) : T(0);
}

// Thresholds one plane of a (N,1,H,W) probability tensor back into a mask.
template <typename T>
BinaryMask mask_from_tensor(const Tensor<T>& probs, int n, T threshold = T(0.5)) {
  const int H = probs.dim(2), W = probs.dim(3);
  BinaryMask m = BinaryMask::filled(H, W, false);
  const T* src = probs.data().data() + static_cast<std::size_t>(n) * H * W;
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = src[i] >= threshold ? 1 : 0;
  return m;
}

}  // namespace iars
