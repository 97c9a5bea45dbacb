#pragma once

// Paired (corrupted, clean) dataset construction from trajectory frame
// directories, the JSON-lines manifest, and seeded batching.
//
// Layout under the output root:
//   manifest.jsonl
//   clean/<trajectory>/<frame>.png
//   corrupted/<label>/<trajectory>/<frame>.png

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "crt/corruption.hpp"
#include "crt/error.hpp"
#include "crt/png_io.hpp"
#include "crt/rng.hpp"

namespace crt {

enum class Split { train, val };

inline std::string_view split_name(Split s) { return s == Split::train ? "train" : "val"; }

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw DataError("unknown split '" + std::string(s) + "'");
}

struct PairRecord {
  std::string pair_id;
  std::string trajectory;
  std::string frame;  // file stem
  std::size_t frame_index = 0;
  std::string label;
  std::string clean_path;      // relative to the dataset root
  std::string corrupted_path;  // relative to the dataset root
  CorruptionSpec spec;
  Split split = Split::train;
};

struct Manifest {
  std::string name;
  std::uint64_t seed = 0;
  double split_ratio = 0.8;
  std::vector<std::string> labels;
  std::vector<PairRecord> pairs;
  std::filesystem::path root;  // not serialized

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [&](const auto& p) { return p.split == s; }));
  }

  const PairRecord& find(std::string_view pair_id) const {
    for (const auto& p : pairs)
      if (p.pair_id == pair_id) return p;
    throw DataError("unknown pair-id '" + std::string(pair_id) + "'");
  }
};

inline constexpr const char* kManifestFile = "manifest.jsonl";

inline std::string make_pair_id(std::string_view trajectory, std::string_view frame, std::string_view label) {
  return std::string(trajectory) + "/" + std::string(frame) + "/" + std::string(label);
}

inline std::uint64_t pair_seed(std::uint64_t dataset_seed, std::string_view pair_id) {
  return hash_combine(dataset_seed, hash_string(pair_id));
}

/// Frame index from an all-digit file stem, otherwise the frame's sorted position.
inline std::size_t frame_index_of(std::string_view stem, std::size_t position) {
  if (stem.empty() || stem.size() > 18 || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; }))
    return position;
  return static_cast<std::size_t>(std::stoull(std::string(stem)));
}

/// Low-discrepancy split: within one (trajectory, label) sequence, consecutive
/// frame indices land in val at rate (1 - train_ratio) with a seeded phase, so
/// every contiguous run of n frames holds n*(1-ratio) val pairs to within one.
inline Split assign_split(std::uint64_t dataset_seed, std::string_view trajectory, std::string_view label,
                          std::size_t frame_index, double train_ratio) {
  const double r = 1.0 - train_ratio;
  const std::uint64_t phase = hash_combine(hash_combine(dataset_seed, hash_string(trajectory)), hash_string(label)) % 1000003;
  const double k = static_cast<double>(frame_index + phase);
  return std::floor((k + 1.0) * r) - std::floor(k * r) >= 1.0 ? Split::val : Split::train;
}

struct DatasetOptions {
  std::string name = "dataset";
  std::vector<std::string> labels;
  std::uint64_t seed = 0;
  double split_ratio = 0.8;
  CorruptionParams params;
};

namespace detail {

inline nlohmann::ordered_json header_json(const Manifest& m) {
  nlohmann::ordered_json h;
  h["format"] = "crt-manifest";
  h["version"] = 1;
  h["name"] = m.name;
  h["seed"] = m.seed;
  h["split_ratio"] = m.split_ratio;
  h["labels"] = m.labels;
  h["pairs"] = m.pairs.size();
  h["train"] = m.count(Split::train);
  h["val"] = m.count(Split::val);
  return h;
}

inline nlohmann::ordered_json record_json(const PairRecord& p) {
  nlohmann::ordered_json r;
  r["pair_id"] = p.pair_id;
  r["trajectory"] = p.trajectory;
  r["frame"] = p.frame;
  r["frame_index"] = p.frame_index;
  r["label"] = p.label;
  r["clean"] = p.clean_path;
  r["corrupted"] = p.corrupted_path;
  r["split"] = split_name(p.split);
  r["spec"] = p.spec.serialize();
  return r;
}

inline void write_atomically(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline std::string serialize_manifest(const Manifest& m) {
  std::string out = detail::header_json(m).dump() + "\n";
  for (const auto& p : m.pairs) out += detail::record_json(p).dump() + "\n";
  return out;
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  detail::write_atomically(path, serialize_manifest(m));
}

/// Reads `<root>/manifest.jsonl` (or a manifest file path directly).
inline Manifest read_manifest(const std::filesystem::path& where) {
  namespace fs = std::filesystem;
  const fs::path path = fs::is_directory(where) ? where / kManifestFile : where;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (lineno == 1) {
        if (j.value("format", "") != "crt-manifest") throw DataError("not a manifest");
        m.name = j.at("name").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.split_ratio = j.at("split_ratio").get<double>();
        m.labels = j.at("labels").get<std::vector<std::string>>();
        continue;
      }
      PairRecord p;
      p.pair_id = j.at("pair_id").get<std::string>();
      p.trajectory = j.at("trajectory").get<std::string>();
      p.frame = j.at("frame").get<std::string>();
      p.frame_index = j.at("frame_index").get<std::size_t>();
      p.label = j.at("label").get<std::string>();
      p.clean_path = j.at("clean").get<std::string>();
      p.corrupted_path = j.at("corrupted").get<std::string>();
      p.split = parse_split(j.at("split").get<std::string>());
      p.spec = CorruptionSpec::parse(j.at("spec").get<std::string>());
      m.pairs.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
  }
  if (lineno == 0) throw DataError("empty manifest " + path.string());
  return m;
}

inline Manifest build_dataset(const std::filesystem::path& frames_root, const std::filesystem::path& out_root,
                              const DatasetOptions& opt) {
  namespace fs = std::filesystem;
  if (opt.labels.empty()) throw UsageError("dataset-build: no corruption kinds given");
  if (!(opt.split_ratio > 0.0 && opt.split_ratio < 1.0)) throw UsageError("dataset-build: split ratio must lie in (0,1)");
  std::set<std::string> seen_labels;
  std::vector<std::pair<CorruptionKind, CorruptionParams>> kinds;
  for (const auto& l : opt.labels) {
    if (!seen_labels.insert(l).second) throw UsageError("dataset-build: duplicate kind " + l);
    kinds.push_back(parse_label(l, opt.params));
  }
  if (!fs::is_directory(frames_root)) throw DataError("frames root " + frames_root.string() + " is not a directory");

  std::vector<fs::path> trajectories;
  for (const auto& e : fs::directory_iterator(frames_root))
    if (e.is_directory()) trajectories.push_back(e.path());
  std::sort(trajectories.begin(), trajectories.end());

  Manifest m;
  m.name = opt.name;
  m.seed = opt.seed;
  m.split_ratio = opt.split_ratio;
  m.root = out_root;
  for (std::size_t i = 0; i < kinds.size(); ++i) m.labels.push_back(corruption_label(kinds[i].first, kinds[i].second));

  for (const auto& traj_dir : trajectories) {
    const std::string traj = traj_dir.filename().string();
    std::vector<fs::path> frames;
    for (const auto& e : fs::directory_iterator(traj_dir))
      if (e.is_regular_file() && e.path().extension() == ".png") frames.push_back(e.path());
    std::sort(frames.begin(), frames.end());
    std::size_t h = 0, w = 0;
    for (std::size_t pos = 0; pos < frames.size(); ++pos) {
      const Image clean = load_image(frames[pos]);
      if (pos == 0) {
        h = clean.height;
        w = clean.width;
      } else if (clean.height != h || clean.width != w) {
        throw DataError("dimension inconsistency in trajectory " + traj + ": " + frames[pos].filename().string() + " is " +
                        std::to_string(clean.height) + "x" + std::to_string(clean.width) + ", expected " +
                        std::to_string(h) + "x" + std::to_string(w));
      }
      const std::string stem = frames[pos].stem().string();
      const std::string clean_rel = "clean/" + traj + "/" + stem + ".png";
      save_image(clean, out_root / clean_rel);
      const std::size_t index = frame_index_of(stem, pos);
      for (std::size_t i = 0; i < kinds.size(); ++i) {
        PairRecord p;
        p.trajectory = traj;
        p.frame = stem;
        p.frame_index = index;
        p.label = m.labels[i];
        p.pair_id = make_pair_id(traj, stem, p.label);
        p.clean_path = clean_rel;
        p.corrupted_path = "corrupted/" + p.label + "/" + traj + "/" + stem + ".png";
        p.spec = sample_spec(kinds[i].first, pair_seed(opt.seed, p.pair_id), h, w, kinds[i].second);
        p.split = assign_split(opt.seed, traj, p.label, index, opt.split_ratio);
        save_image(corrupt(clean, p.spec), out_root / p.corrupted_path);
        m.pairs.push_back(std::move(p));
      }
    }
  }
  if (m.pairs.empty()) throw DataError("frames root " + frames_root.string() + " contains no PNG frames");
  write_manifest(m, out_root / kManifestFile);
  return m;
}

/// (corrupted, clean) for one record.
inline std::pair<Image, Image> load_pair(const Manifest& m, const PairRecord& p) {
  auto load = [&](const std::string& rel) {
    try {
      return load_image(m.root / rel);
    } catch (const DataError& e) {
      throw DataError("pair " + p.pair_id + ": " + e.what());
    }
  };
  Image corrupted = load(p.corrupted_path);
  Image clean = load(p.clean_path);
  if (!corrupted.same_size(clean)) throw DataError("pair " + p.pair_id + ": corrupted and clean dimensions differ");
  return {std::move(corrupted), std::move(clean)};
}

inline std::pair<Image, Image> load_pair(const Manifest& m, std::string_view pair_id) { return load_pair(m, m.find(pair_id)); }

/// Manifest indices of one split, shuffled by `epoch_seed` and cut into
/// batches; the final partial batch is kept.
inline std::vector<std::vector<std::size_t>> batch_iterator(const Manifest& m, Split split, std::size_t batch_size,
                                                            std::uint64_t epoch_seed) {
  if (batch_size < 1) throw UsageError("batch size must be >= 1");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.pairs.size(); ++i)
    if (m.pairs[i].split == split) idx.push_back(i);
  if (idx.empty()) throw DataError(std::string("split '") + std::string(split_name(split)) + "' is empty");
  CounterRng rng(epoch_seed, 0x5EED);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < idx.size(); i += batch_size)
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                         idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), i + batch_size)));
  return batches;
}

}  // namespace crt
