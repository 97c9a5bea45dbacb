#pragma once

// Batched generator inference and the per-kind restoration-quality report.

#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crt/dataset.hpp"
#include "crt/image.hpp"
#include "crt/metrics.hpp"
#include "crt/model.hpp"

namespace crt {

/// G applied to each image, `batch` images per forward pass, no graph recorded.
template <class T>
std::vector<Image> restore_images(const ModelConfig& c, const ParameterSet<T>& ps, std::span<const Image> images,
                                  std::size_t batch = 8) {
  ad::NoGradGuard guard;
  std::vector<Image> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); i += batch) {
    const auto chunk = images.subspan(i, std::min(batch, images.size() - i));
    const auto restored = generator_forward(c, ps, to_tensor<T>(chunk));
    for (std::size_t b = 0; b < chunk.size(); ++b) out.push_back(from_tensor(restored, b));
  }
  return out;
}

/// (corrupted, clean) tensors [B, 3, H, W] for the given manifest rows.
template <class T>
std::pair<ad::Tensor<T>, ad::Tensor<T>> load_batch(const Manifest& m, std::span<const std::size_t> indices) {
  std::vector<Image> corrupted, clean;
  for (std::size_t i : indices) {
    auto [c, x] = load_pair(m, m.pairs.at(i));
    corrupted.push_back(std::move(c));
    clean.push_back(std::move(x));
  }
  return {to_tensor<T>(corrupted), to_tensor<T>(clean)};
}

struct KindMetrics {
  std::string label;
  std::size_t pairs = 0;
  double psnr_corrupted = 0;
  double psnr_restored = 0;
  double ssim_corrupted = 0;
  double ssim_restored = 0;

  double psnr_delta() const { return psnr_restored - psnr_corrupted; }
  double ssim_delta() const { return ssim_restored - ssim_corrupted; }
};

struct EvalReport {
  std::string split;
  std::vector<KindMetrics> rows;  // manifest label order

  const KindMetrics& row(std::string_view label) const {
    for (const auto& r : rows)
      if (r.label == label) return r;
    throw DataError("report has no rows for kind '" + std::string(label) + "'");
  }

  std::string to_jsonl() const {
    std::string out;
    for (const auto& r : rows) {
      nlohmann::ordered_json j;
      j["split"] = split;
      j["kind"] = r.label;
      j["pairs"] = r.pairs;
      j["psnr_corrupted"] = r.psnr_corrupted;
      j["psnr_restored"] = r.psnr_restored;
      j["psnr_delta"] = r.psnr_delta();
      j["ssim_corrupted"] = r.ssim_corrupted;
      j["ssim_restored"] = r.ssim_restored;
      j["ssim_delta"] = r.ssim_delta();
      out += j.dump() + "\n";
    }
    return out;
  }

  /// Aligned text table: one column per kind, one row per metric.
  std::string to_table() const {
    std::vector<std::string> header{"metric (" + split + ")"};
    for (const auto& r : rows) header.push_back(r.label);
    std::vector<std::vector<std::string>> lines{header};
    auto num = [](double v, int prec) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.*f", prec, v);
      return std::string(buf);
    };
    auto add = [&](const std::string& name, auto get, int prec) {
      std::vector<std::string> line{name};
      for (const auto& r : rows) line.push_back(get(r, prec));
      lines.push_back(std::move(line));
    };
    add("pairs", [](const KindMetrics& r, int) { return std::to_string(r.pairs); }, 0);
    add("PSNR corrupted (dB)", [&](const KindMetrics& r, int p) { return num(r.psnr_corrupted, p); }, 2);
    add("PSNR restored (dB)", [&](const KindMetrics& r, int p) { return num(r.psnr_restored, p); }, 2);
    add("PSNR delta (dB)", [&](const KindMetrics& r, int p) { return num(r.psnr_delta(), p); }, 2);
    add("SSIM corrupted", [&](const KindMetrics& r, int p) { return num(r.ssim_corrupted, p); }, 4);
    add("SSIM restored", [&](const KindMetrics& r, int p) { return num(r.ssim_restored, p); }, 4);
    add("SSIM delta", [&](const KindMetrics& r, int p) { return num(r.ssim_delta(), p); }, 4);
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& l : lines)
      for (std::size_t i = 0; i < l.size(); ++i) width[i] = std::max(width[i], l[i].size());
    std::string out;
    for (const auto& l : lines) {
      for (std::size_t i = 0; i < l.size(); ++i) {
        const std::string pad(width[i] - l[i].size(), ' ');
        out += i == 0 ? l[i] + pad : "  " + pad + l[i];
      }
      out += "\n";
    }
    return out;
  }
};

/// Mean PSNR/SSIM of corrupted-vs-clean and restored-vs-clean per kind.
template <class T>
EvalReport evaluate(const ModelConfig& c, const ParameterSet<T>& ps, const Manifest& m, Split split,
                    std::size_t batch = 8) {
  ps.check(c);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.pairs.size(); ++i)
    if (m.pairs[i].split == split) idx.push_back(i);
  if (idx.empty()) throw DataError(std::string("evaluate: split '") + std::string(split_name(split)) + "' is empty");

  std::map<std::string, KindMetrics> acc;
  for (std::size_t i = 0; i < idx.size(); i += batch) {
    std::vector<Image> corrupted, clean;
    std::vector<std::string> labels;
    for (std::size_t j = i; j < std::min(idx.size(), i + batch); ++j) {
      const auto& rec = m.pairs[idx[j]];
      auto [x_c, x] = load_pair(m, rec);
      if (x.height != c.image_side || x.width != c.image_side) {
        throw DataError("evaluate: pair " + rec.pair_id + " is " + std::to_string(x.height) + "x" +
                        std::to_string(x.width) + " but the model expects " + std::to_string(c.image_side));
      }
      corrupted.push_back(std::move(x_c));
      clean.push_back(std::move(x));
      labels.push_back(rec.label);
    }
    const auto restored = restore_images(c, ps, std::span<const Image>(corrupted), batch);
    for (std::size_t b = 0; b < labels.size(); ++b) {
      auto& k = acc[labels[b]];
      k.label = labels[b];
      ++k.pairs;
      k.psnr_corrupted += psnr(corrupted[b], clean[b]);
      k.psnr_restored += psnr(restored[b], clean[b]);
      k.ssim_corrupted += ssim(corrupted[b], clean[b]);
      k.ssim_restored += ssim(restored[b], clean[b]);
    }
  }
  EvalReport report{std::string(split_name(split)), {}};
  for (const auto& label : m.labels) {
    const auto it = acc.find(label);
    if (it == acc.end()) continue;
    KindMetrics k = it->second;
    const double n = static_cast<double>(k.pairs);
    k.psnr_corrupted /= n;
    k.psnr_restored /= n;
    k.ssim_corrupted /= n;
    k.ssim_restored /= n;
    report.rows.push_back(k);
  }
  return report;
}

}  // namespace crt
