#pragma once

// Restoration transformer: shifted-patch tokenizer, axial rotary position
// embedding, locality self-attention blocks, and the token-to-image head of the
// generator, plus the transformer discriminator.
//
// Image tensors are [B, 3, H, W]; token tensors are [B, N, d] with tokens in
// row-major patch-grid order.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "crt/error.hpp"
#include "crt/ops.hpp"
#include "crt/rng.hpp"

namespace crt {

struct ModelConfig {
  std::size_t image_side = 64;
  std::size_t patch = 8;
  std::size_t dim = 128;
  std::size_t depth = 6;
  std::size_t heads = 4;
  double mlp_ratio = 2.0;
  // Discriminator sizes; 0 mirrors the generator value.
  std::size_t disc_dim = 0;
  std::size_t disc_depth = 0;
  std::size_t disc_heads = 0;
  bool residual = false;
  double rope_base = 10000.0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  std::size_t grid() const { return image_side / patch; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t patch_features() const { return 3 * patch * patch; }
  std::size_t spt_features() const { return 5 * patch_features(); }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t mlp_hidden(std::size_t d) const { return static_cast<std::size_t>(std::lround(static_cast<double>(d) * mlp_ratio)); }
  std::size_t d_dim() const { return disc_dim ? disc_dim : dim; }
  std::size_t d_depth() const { return disc_depth ? disc_depth : depth; }
  std::size_t d_heads() const { return disc_heads ? disc_heads : heads; }

  void validate() const {
    auto fail = [](const std::string& m) { throw UsageError("model config: " + m); };
    if (patch < 2 || patch % 2) fail("patch size must be even and >= 2");
    if (image_side % patch) fail("image side " + std::to_string(image_side) + " not divisible by patch " + std::to_string(patch));
    if (tokens() < 2) fail("need at least two tokens");
    if (depth < 1 || dim < 1 || heads < 1) fail("depth, dim and heads must be >= 1");
    if (!(mlp_ratio > 0.0) || mlp_hidden(dim) < 1 || mlp_hidden(d_dim()) < 1) fail("mlp ratio must be positive");
    if (!(rope_base > 1.0)) fail("rope base must exceed 1");
    for (auto [d, h] : {std::pair{dim, heads}, std::pair{d_dim(), d_heads()}}) {
      if (d % h) fail("dim " + std::to_string(d) + " not divisible by heads " + std::to_string(h));
      if ((d / h) % 2) fail("head dim " + std::to_string(d / h) + " must be even");
    }
  }

  std::string serialize() const {
    std::ostringstream os;
    os.precision(17);
    os << "image_side=" << image_side << " patch=" << patch << " dim=" << dim << " depth=" << depth << " heads=" << heads
       << " mlp_ratio=" << mlp_ratio << " disc_dim=" << disc_dim << " disc_depth=" << disc_depth
       << " disc_heads=" << disc_heads << " residual=" << (residual ? 1 : 0) << " rope_base=" << rope_base;
    return os.str();
  }

  /// Parses whitespace-separated key=value pairs over the defaults.
  static ModelConfig parse(const std::string& text) { return parse(text, ModelConfig()); }

  static ModelConfig parse(const std::string& text, ModelConfig c) {
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) {
        // A bare word names a preset that later keys refine.
        if (tok == "desk") c = desk();
        else if (tok == "toy") c = toy();
        else if (tok == "libero") c = libero();
        else if (tok == "metaworld") c = metaworld();
        else throw UsageError("model config: expected key=value or a preset name, got '" + tok + "'");
        continue;
      }
      const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
      try {
        if (k == "image_side") c.image_side = std::stoul(v);
        else if (k == "patch") c.patch = std::stoul(v);
        else if (k == "dim") c.dim = std::stoul(v);
        else if (k == "depth") c.depth = std::stoul(v);
        else if (k == "heads") c.heads = std::stoul(v);
        else if (k == "mlp_ratio") c.mlp_ratio = std::stod(v);
        else if (k == "disc_dim") c.disc_dim = std::stoul(v);
        else if (k == "disc_depth") c.disc_depth = std::stoul(v);
        else if (k == "disc_heads") c.disc_heads = std::stoul(v);
        else if (k == "residual") c.residual = v == "1" || v == "true";
        else if (k == "rope_base") c.rope_base = std::stod(v);
        else throw UsageError("model config: unknown key '" + k + "'");
      } catch (const std::logic_error&) {
        throw UsageError("model config: bad value for '" + k + "': " + v);
      }
    }
    return c;
  }

  static ModelConfig desk() { return {}; }

  static ModelConfig toy() {
    ModelConfig c;
    c.image_side = 32;
    c.dim = 64;
    c.depth = 2;
    return c;
  }

  static ModelConfig libero() {
    ModelConfig c;
    c.image_side = 360;
    c.patch = 12;
    c.dim = 512;
    c.depth = 12;
    c.heads = 8;
    return c;
  }

  static ModelConfig metaworld() {
    ModelConfig c = libero();
    c.image_side = 480;
    c.patch = 16;
    return c;
  }
};

enum class InitKind { normal, zeros, ones, temperature };

struct ParameterShape {
  std::string name;
  ad::Shape shape;
  InitKind init;
};

inline std::string block_prefix(std::string_view net, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, ".block%02zu.", i);
  return std::string(net) + buf;
}

/// Every parameter of the generator ("gen.") and discriminator ("disc.").
inline std::vector<ParameterShape> parameter_shapes(const ModelConfig& c) {
  c.validate();
  std::vector<ParameterShape> out;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t o) {
    out.push_back({name + ".weight", {in, o}, InitKind::normal});
    out.push_back({name + ".bias", {o}, InitKind::zeros});
  };
  auto norm = [&](const std::string& name, std::size_t n) {
    out.push_back({name + ".scale", {n}, InitKind::ones});
    out.push_back({name + ".shift", {n}, InitKind::zeros});
  };
  auto blocks = [&](std::string_view net, std::size_t depth, std::size_t d, std::size_t h) {
    for (std::size_t i = 0; i < depth; ++i) {
      const std::string p = block_prefix(net, i);
      norm(p + "ln1", d);
      linear(p + "attn.q", d, d);
      linear(p + "attn.k", d, d);
      linear(p + "attn.v", d, d);
      linear(p + "attn.out", d, d);
      out.push_back({p + "attn.tau", {h}, InitKind::temperature});
      norm(p + "ln2", d);
      linear(p + "mlp.fc1", d, c.mlp_hidden(d));
      linear(p + "mlp.fc2", c.mlp_hidden(d), d);
    }
  };
  norm("gen.spt.norm", c.spt_features());
  linear("gen.spt.proj", c.spt_features(), c.dim);
  blocks("gen", c.depth, c.dim, c.heads);
  norm("gen.head.norm", c.dim);
  linear("gen.head.proj", c.dim, c.patch_features());

  const std::size_t dd = c.d_dim();
  linear("disc.embed", c.patch_features(), dd);
  blocks("disc", c.d_depth(), dd, c.d_heads());
  norm("disc.norm", dd);
  linear("disc.fc1", dd, dd);
  linear("disc.fc2", dd, 1);
  return out;
}

template <class T>
class ParameterSet {
 public:
  std::map<std::string, ad::Tensor<T>> tensors;

  const ad::Tensor<T>& get(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("missing parameter '" + name + "'");
    return it->second;
  }

  ad::Tensor<T>& get(const std::string& name) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("missing parameter '" + name + "'");
    return it->second;
  }

  std::vector<ad::Tensor<T>> group(std::string_view prefix) const {
    std::vector<ad::Tensor<T>> out;
    for (const auto& [name, t] : tensors)
      if (name.starts_with(prefix)) out.push_back(t);
    return out;
  }

  void set_requires_grad(std::string_view prefix, bool value) {
    for (auto& [name, t] : tensors)
      if (name.starts_with(prefix)) t.set_requires_grad(value);
  }

  void zero_grad() {
    for (auto& [name, t] : tensors) t.zero_grad();
  }

  std::size_t count(std::string_view prefix = "") const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors)
      if (name.starts_with(prefix)) n += t.numel();
    return n;
  }

  /// FNV-1a over names and value bytes of the matching tensors.
  std::uint64_t hash(std::string_view prefix = "") const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001B3ULL;
    };
    for (const auto& [name, t] : tensors) {
      if (!name.starts_with(prefix)) continue;
      mix(name.data(), name.size());
      mix(t.data().data(), t.numel() * sizeof(T));
    }
    return h;
  }

  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, t] : tensors) {
      std::vector<U> v(t.data().begin(), t.data().end());
      out.tensors.emplace(name, ad::Tensor<U>(t.shape(), std::move(v), t.requires_grad()));
    }
    return out;
  }

  /// Throws DataError unless names and shapes match the config exactly.
  void check(const ModelConfig& c) const {
    const auto shapes = parameter_shapes(c);
    if (shapes.size() != tensors.size()) {
      throw DataError("parameter set has " + std::to_string(tensors.size()) + " tensors, config expects " +
                      std::to_string(shapes.size()));
    }
    for (const auto& s : shapes) {
      const auto& t = get(s.name);
      if (t.shape() != s.shape) {
        throw DataError("parameter '" + s.name + "' has shape " + ad::to_string(t.shape()) + ", config expects " +
                        ad::to_string(s.shape));
      }
    }
  }
};

inline constexpr double kInitStd = 0.02;

/// Truncated-normal (std 0.02, cut at two standard deviations) weights, zero
/// biases and shifts, unit scales, temperatures sqrt(d/h). Each tensor draws
/// from its own stream keyed by (seed, name).
template <class T>
ParameterSet<T> init_params(const ModelConfig& c, std::uint64_t seed) {
  ParameterSet<T> ps;
  for (const auto& s : parameter_shapes(c)) {
    const std::size_t n = ad::numel(s.shape);
    std::vector<T> v(n);
    switch (s.init) {
      case InitKind::zeros: break;
      case InitKind::ones: std::fill(v.begin(), v.end(), T(1)); break;
      case InitKind::temperature: {
        const std::size_t d = s.name.starts_with("disc.") ? c.d_dim() : c.dim;
        std::fill(v.begin(), v.end(), static_cast<T>(std::sqrt(static_cast<double>(d) / static_cast<double>(n))));
        break;
      }
      case InitKind::normal: {
        CounterRng rng(seed, hash_string(s.name));
        for (auto& x : v) {
          double z;
          do z = rng.normal();
          while (std::abs(z) > 2.0);
          x = static_cast<T>(kInitStd * z);
        }
        break;
      }
    }
    ps.tensors.emplace(s.name, ad::Tensor<T>(s.shape, std::move(v), true));
  }
  return ps;
}

inline constexpr double kMinTemperature = 1e-2;

/// Keeps every attention temperature at or above kMinTemperature.
template <class T>
void clamp_temperatures(ParameterSet<T>& ps) {
  for (auto& [name, t] : ps.tensors)
    if (name.ends_with(".attn.tau"))
      for (auto& v : t.mutable_data()) v = std::max(v, static_cast<T>(kMinTemperature));
}

// ---------------------------------------------------------------------------
// Tokenization.

/// Shifted-patch raw tokens [B, N, 15 P^2]. Per patch the features are ordered
/// [copy][channel][py][px] with copies: original, then content shifted by P/2
/// toward up-left, up-right, down-right, down-left (zero fill). Constant with
/// respect to the image (no gradient).
template <class T>
ad::Tensor<T> spt_raw_tokens(const ad::Tensor<T>& x, std::size_t patch) {
  if (x.rank() != 4 || x.dim(1) != 3) throw std::invalid_argument("spt: expected [B,3,H,W], got " + ad::to_string(x.shape()));
  const std::size_t B = x.dim(0), H = x.dim(2), W = x.dim(3), P = patch;
  if (P < 2 || P % 2 || H % P || W % P) {
    throw UsageError("spt: image " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by even patch " + std::to_string(P));
  }
  const std::size_t gh = H / P, gw = W / P, N = gh * gw, F = 15 * P * P;
  const auto s = static_cast<std::ptrdiff_t>(P / 2);
  // Copy k samples the source at (y + dy, x + dx).
  const std::ptrdiff_t offsets[5][2] = {{0, 0}, {s, s}, {s, -s}, {-s, -s}, {-s, s}};
  std::vector<T> out(B * N * F, T(0));
  const T* src = x.data().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t gy = 0; gy < gh; ++gy)
      for (std::size_t gx = 0; gx < gw; ++gx) {
        T* tok = out.data() + (b * N + gy * gw + gx) * F;
        for (std::size_t k = 0; k < 5; ++k)
          for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t py = 0; py < P; ++py)
              for (std::size_t px = 0; px < P; ++px) {
                const auto y = static_cast<std::ptrdiff_t>(gy * P + py) + offsets[k][0];
                const auto xx = static_cast<std::ptrdiff_t>(gx * P + px) + offsets[k][1];
                if (y < 0 || xx < 0 || y >= static_cast<std::ptrdiff_t>(H) || xx >= static_cast<std::ptrdiff_t>(W)) continue;
                tok[((k * 3 + c) * P + py) * P + px] =
                    src[((b * 3 + c) * H + static_cast<std::size_t>(y)) * W + static_cast<std::size_t>(xx)];
              }
      }
  return ad::Tensor<T>({B, N, F}, std::move(out));
}

/// Differentiable non-overlapping patches [B, N, 3 P^2], features [channel][py][px].
template <class T>
ad::Tensor<T> unfold_patches(const ad::Tensor<T>& x, std::size_t P) {
  const std::size_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
  if (H % P || W % P) throw UsageError("unfold: image not divisible by patch " + std::to_string(P));
  auto t = ad::reshape(x, {B, 3, H / P, P, W / P, P});
  t = ad::permute(t, {0, 2, 4, 1, 3, 5});
  return ad::reshape(t, {B, (H / P) * (W / P), 3 * P * P});
}

/// Inverse of unfold_patches: [B, N, 3 P^2] -> [B, 3, gh P, gw P].
template <class T>
ad::Tensor<T> fold_patches(const ad::Tensor<T>& tokens, std::size_t P, std::size_t gh, std::size_t gw) {
  const std::size_t B = tokens.dim(0);
  if (tokens.dim(1) != gh * gw || tokens.dim(2) != 3 * P * P) throw std::invalid_argument("fold: token shape " + ad::to_string(tokens.shape()));
  auto t = ad::reshape(tokens, {B, gh, gw, 3, P, P});
  t = ad::permute(t, {0, 3, 1, 4, 2, 5});
  return ad::reshape(t, {B, 3, gh * P, gw * P});
}

template <class T>
ad::Tensor<T> linear(const ad::Tensor<T>& x, const ParameterSet<T>& ps, const std::string& name) {
  return ad::add(ad::matmul(x, ps.get(name + ".weight")), ps.get(name + ".bias"));
}

template <class T>
ad::Tensor<T> norm(const ad::Tensor<T>& x, const ParameterSet<T>& ps, const std::string& name) {
  return ad::layer_norm(x, ps.get(name + ".scale"), ps.get(name + ".shift"));
}

// ---------------------------------------------------------------------------
// Rotary position embedding.

/// cos/sin tables [N, dh] for token positions (row, col). Pair p rotates dims
/// (2p, 2p+1); the first ceil(dh/4) pairs follow the row coordinate and the rest
/// the column, each axis with theta_i = base^(-2i / d_axis).
template <class T>
std::pair<ad::Tensor<T>, ad::Tensor<T>> rope_tables(const std::vector<std::pair<double, double>>& positions,
                                                    std::size_t head_dim, double base = 10000.0) {
  if (head_dim < 2 || head_dim % 2) throw UsageError("rope: head dim " + std::to_string(head_dim) + " must be even");
  const std::size_t pairs = head_dim / 2, row_pairs = (pairs + 1) / 2, col_pairs = pairs - row_pairs;
  const std::size_t N = positions.size();
  std::vector<T> cs(N * head_dim), sn(N * head_dim);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < pairs; ++p) {
      const bool row = p < row_pairs;
      const std::size_t i = row ? p : p - row_pairs;
      const double d_axis = 2.0 * static_cast<double>(row ? row_pairs : col_pairs);
      const double theta = std::pow(base, -2.0 * static_cast<double>(i) / d_axis);
      const double angle = (row ? positions[n].first : positions[n].second) * theta;
      cs[n * head_dim + 2 * p] = cs[n * head_dim + 2 * p + 1] = static_cast<T>(std::cos(angle));
      sn[n * head_dim + 2 * p] = sn[n * head_dim + 2 * p + 1] = static_cast<T>(std::sin(angle));
    }
  return {ad::Tensor<T>({N, head_dim}, std::move(cs)), ad::Tensor<T>({N, head_dim}, std::move(sn))};
}

inline std::vector<std::pair<double, double>> grid_positions(std::size_t gh, std::size_t gw) {
  std::vector<std::pair<double, double>> pos;
  for (std::size_t r = 0; r < gh; ++r)
    for (std::size_t c = 0; c < gw; ++c) pos.emplace_back(static_cast<double>(r), static_cast<double>(c));
  return pos;
}

/// Rotates each dimension pair of x [..., N, dh]: (a, b) -> (a cos - b sin, b cos + a sin).
template <class T>
ad::Tensor<T> rope_rotate(const ad::Tensor<T>& x, const ad::Tensor<T>& cos_t, const ad::Tensor<T>& sin_t) {
  const std::size_t N = cos_t.dim(0), dh = cos_t.dim(1);
  if (x.rank() < 2 || x.dim(-1) != dh || x.dim(-2) != N) {
    throw std::invalid_argument("rope: input " + ad::to_string(x.shape()) + " vs tables " + ad::to_string(cos_t.shape()));
  }
  const std::size_t block = N * dh, outer = x.numel() / block;
  auto rotate = [block, outer](const T* in, const T* c, const T* s, T* out, T sign) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < block; i += 2) {
        const T a = in[o * block + i], b = in[o * block + i + 1];
        out[o * block + i] += a * c[i] - sign * b * s[i];
        out[o * block + i + 1] += b * c[i] + sign * a * s[i];
      }
  };
  std::vector<T> out(x.numel(), T(0));
  rotate(x.data().data(), cos_t.data().data(), sin_t.data().data(), out.data(), T(1));
  return ad::make_result<T>("rope", x.shape(), std::move(out), {x}, [rotate, cos_t, sin_t](ad::Node<T>& self) {
    // The transpose of a rotation is the rotation by the negated angle.
    rotate(self.grad.data(), cos_t.data().data(), sin_t.data().data(), ad::detail::grad_of(self, 0), T(-1));
  });
}

// ---------------------------------------------------------------------------
// Locality self-attention.

/// [N, N] additive mask with -inf on the diagonal.
template <class T>
ad::Tensor<T> self_mask(std::size_t N) {
  std::vector<T> m(N * N, T(0));
  for (std::size_t i = 0; i < N; ++i) m[i * N + i] = -std::numeric_limits<T>::infinity();
  return ad::Tensor<T>({N, N}, std::move(m));
}

/// Attention weights softmax(q k^T / tau + mask) for q, k [B, h, N, dh], tau [h].
template <class T>
ad::Tensor<T> lsa_weights(const ad::Tensor<T>& q, const ad::Tensor<T>& k, const ad::Tensor<T>& tau) {
  const std::size_t h = q.dim(1), N = q.dim(2);
  if (tau.shape() != ad::Shape{h}) throw std::invalid_argument("lsa: temperature shape " + ad::to_string(tau.shape()));
  for (T t : tau.data())
    if (!(t > T(0))) throw NumericalError("lsa: non-positive temperature " + std::to_string(static_cast<double>(t)));
  auto scores = ad::matmul(q, ad::transpose(k));
  scores = ad::div(scores, ad::reshape(tau, {1, h, 1, 1}));
  return ad::softmax(ad::add(scores, self_mask<T>(N)));
}

template <class T>
ad::Tensor<T> lsa_attention(const ad::Tensor<T>& q, const ad::Tensor<T>& k, const ad::Tensor<T>& v, const ad::Tensor<T>& tau) {
  return ad::matmul(lsa_weights(q, k, tau), v);
}

/// Pre-norm transformer block with RoPE + LSA attention and a GELU MLP.
template <class T>
ad::Tensor<T> transformer_block(const ad::Tensor<T>& x, const ParameterSet<T>& ps, const std::string& p, std::size_t heads,
                                const ad::Tensor<T>& cos_t, const ad::Tensor<T>& sin_t) {
  const std::size_t B = x.dim(0), N = x.dim(1), d = x.dim(2), dh = d / heads;
  auto split_heads = [&](const ad::Tensor<T>& t) { return ad::permute(ad::reshape(t, {B, N, heads, dh}), {0, 2, 1, 3}); };
  const auto h1 = norm(x, ps, p + "ln1");
  const auto q = rope_rotate(split_heads(linear(h1, ps, p + "attn.q")), cos_t, sin_t);
  const auto k = rope_rotate(split_heads(linear(h1, ps, p + "attn.k")), cos_t, sin_t);
  const auto v = split_heads(linear(h1, ps, p + "attn.v"));
  auto att = lsa_attention(q, k, v, ps.get(p + "attn.tau"));
  att = ad::reshape(ad::permute(att, {0, 2, 1, 3}), {B, N, d});
  const auto x1 = ad::add(x, linear(att, ps, p + "attn.out"));
  const auto m = linear(ad::gelu(linear(norm(x1, ps, p + "ln2"), ps, p + "mlp.fc1")), ps, p + "mlp.fc2");
  return ad::add(x1, m);
}

namespace detail {

template <class T>
void check_input(const ModelConfig& c, const ad::Tensor<T>& x, std::string_view who) {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != c.image_side || x.dim(3) != c.image_side) {
    throw DataError(std::string(who) + ": input " + ad::to_string(x.shape()) + " does not match configured side " +
                    std::to_string(c.image_side));
  }
}

template <class T>
ad::Tensor<T> logit_clamped(const ad::Tensor<T>& x) {
  std::vector<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double p = std::clamp(static_cast<double>(x.data()[i]), 1e-3, 1.0 - 1e-3);
    v[i] = static_cast<T>(std::log(p / (1.0 - p)));
  }
  return ad::Tensor<T>(x.shape(), std::move(v));
}

}  // namespace detail

/// G(x'): restored image [B, 3, H, W] in (0, 1).
template <class T>
ad::Tensor<T> generator_forward(const ModelConfig& c, const ParameterSet<T>& ps, const ad::Tensor<T>& x) {
  detail::check_input(c, x, "generator");
  const std::size_t g = c.grid();
  auto t = linear(norm(spt_raw_tokens(x, c.patch), ps, "gen.spt.norm"), ps, "gen.spt.proj");
  const auto [cs, sn] = rope_tables<T>(grid_positions(g, g), c.head_dim(), c.rope_base);
  for (std::size_t i = 0; i < c.depth; ++i) t = transformer_block(t, ps, block_prefix("gen", i), c.heads, cs, sn);
  auto out = fold_patches(linear(norm(t, ps, "gen.head.norm"), ps, "gen.head.proj"), c.patch, g, g);
  if (c.residual) out = ad::add(out, detail::logit_clamped(x));
  return ad::sigmoid(out);
}

/// Pre-sigmoid validity scores [B]; D(x) = sigmoid of these.
template <class T>
ad::Tensor<T> discriminator_logits(const ModelConfig& c, const ParameterSet<T>& ps, const ad::Tensor<T>& x) {
  detail::check_input(c, x, "discriminator");
  const std::size_t g = c.grid(), B = x.dim(0);
  auto t = linear(unfold_patches(x, c.patch), ps, "disc.embed");
  const auto [cs, sn] = rope_tables<T>(grid_positions(g, g), c.d_dim() / c.d_heads(), c.rope_base);
  for (std::size_t i = 0; i < c.d_depth(); ++i) t = transformer_block(t, ps, block_prefix("disc", i), c.d_heads(), cs, sn);
  const auto pooled = ad::mean(norm(t, ps, "disc.norm"), 1);
  const auto z = linear(ad::gelu(linear(pooled, ps, "disc.fc1")), ps, "disc.fc2");
  return ad::reshape(z, {B});
}

template <class T>
ad::Tensor<T> discriminator_forward(const ModelConfig& c, const ParameterSet<T>& ps, const ad::Tensor<T>& x) {
  return ad::sigmoid(discriminator_logits(c, ps, x));
}

}  // namespace crt
