#pragma once

// Double-precision reference forward passes used as test oracles. They read
// the raw weight store and share no code with the graph evaluator.

#include <cmath>
#include <limits>
#include <vector>

#include "zkinfer/model.hpp"

namespace ref {

using Mat = std::vector<std::vector<double>>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

inline double w(const zkinfer::WeightStore& ws, const std::string& name, std::size_t i) {
  return static_cast<double>(ws.at(name).data.at(i));
}

inline Mat layer_norm(const Mat& x, const zkinfer::WeightStore& ws, const std::string& p) {
  Mat out = x;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const std::size_t c = x[t].size();
    double mean = 0, var = 0;
    for (double v : x[t]) mean += v;
    mean /= static_cast<double>(c);
    for (double v : x[t]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t j = 0; j < c; ++j)
      out[t][j] = (x[t][j] - mean) * inv * w(ws, p + ".weight", j) + w(ws, p + ".bias", j);
  }
  return out;
}

// x[T, in] * W[in, out] + b
inline Mat linear(const Mat& x, const zkinfer::WeightStore& ws, const std::string& p) {
  const auto& W = ws.at(p + ".weight");
  const std::size_t in = W.shape[0], outd = W.shape[1];
  Mat y = zeros(x.size(), outd);
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t o = 0; o < outd; ++o) {
      double acc = w(ws, p + ".bias", o);
      for (std::size_t i = 0; i < in; ++i) acc += x[t][i] * static_cast<double>(W.data[i * outd + o]);
      y[t][o] = acc;
    }
  return y;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

/// Logits [T, V] of the nanoGPT forward pass with a causal mask.
inline Mat nanogpt_logits(const zkinfer::NanoGptConfig& cfg, const zkinfer::WeightStore& ws,
                          const std::vector<std::int64_t>& tokens) {
  const std::size_t T = tokens.size(), C = static_cast<std::size_t>(cfg.embed_size);
  const std::size_t H = static_cast<std::size_t>(cfg.n_heads), hd = C / H;
  Mat x = zeros(T, C);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c)
      x[t][c] = w(ws, "wte", static_cast<std::size_t>(tokens[t]) * C + c) + w(ws, "wpe", t * C + c);
  for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "h." + std::to_string(l) + ".";
    const Mat h = layer_norm(x, ws, p + "ln_1");
    const Mat q = linear(h, ws, p + "attn.q"), k = linear(h, ws, p + "attn.k"), v = linear(h, ws, p + "attn.v");
    Mat y = zeros(T, C);
    for (std::size_t hh = 0; hh < H; ++hh)
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<double> s(T);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < T; ++j) {
          if (j > i) {
            s[j] = -std::numeric_limits<double>::infinity();
            continue;
          }
          double d = 0;
          for (std::size_t e = 0; e < hd; ++e) d += q[i][hh * hd + e] * k[j][hh * hd + e];
          s[j] = d / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j < T; ++j) z += s[j] = std::exp(s[j] - mx);
        for (std::size_t j = 0; j < T; ++j)
          for (std::size_t e = 0; e < hd; ++e) y[i][hh * hd + e] += s[j] / z * v[j][hh * hd + e];
      }
    const Mat a = linear(y, ws, p + "attn.c_proj");
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c) x[t][c] += a[t][c];
    Mat f = linear(layer_norm(x, ws, p + "ln_2"), ws, p + "mlp.c_fc");
    for (auto& row : f)
      for (auto& val : row) val = gelu(val);
    const Mat m = linear(f, ws, p + "mlp.c_proj");
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c) x[t][c] += m[t][c];
  }
  const Mat hf = layer_norm(x, ws, "ln_f");
  const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
  Mat logits = zeros(T, V);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t vv = 0; vv < V; ++vv) {
      double acc = 0;
      for (std::size_t c = 0; c < C; ++c) acc += hf[t][c] * w(ws, "wte", vv * C + c);
      logits[t][vv] = acc;
    }
  return logits;
}

inline std::vector<double> mlp_forward(const zkinfer::MlpConfig& cfg, const zkinfer::WeightStore& ws,
                                       const std::vector<double>& x0) {
  Mat x{x0};
  for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
    x = linear(x, ws, "l" + std::to_string(l));
    for (auto& v : x[0]) v = std::max(0.0, v);
  }
  return x[0];
}

/// N for nanoGPT counted per tensor family.
inline std::int64_t nanogpt_params(std::int64_t V, std::int64_t B, std::int64_t L, std::int64_t C) {
  const std::int64_t per_block = 2 * C + 3 * (C * C + C) + (C * C + C) + 2 * C + (C * 4 * C + 4 * C) + (4 * C * C + C);
  return V * C + B * C + L * per_block + 2 * C;
}

}  // namespace ref
