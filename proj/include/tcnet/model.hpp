#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tcnet/data/schema.hpp"
#include "tcnet/params.hpp"
#include "tcnet/tape.hpp"

namespace tcnet::model {

struct ModelConfig {
  std::size_t d_model = 28;
  std::size_t heads = 7;
  std::size_t encoder_blocks = 1;
  std::size_t ffn_hidden = 0;  // 0 means 4 * d_model
  std::vector<std::size_t> trunk_widths{256, 128, 64, 32, 16};
  bool allow_trunk_override = false;
  double layer_norm_eps = 1e-5;

  std::size_t d_k() const { return d_model / heads; }
  std::size_t ffn_width() const { return ffn_hidden == 0 ? 4 * d_model : ffn_hidden; }
  std::size_t feature_width() const { return trunk_widths.back(); }

  void validate() const {
    if (heads == 0 || d_model == 0 || d_model % heads != 0)
      fail(ErrorKind::InvalidArgument, "d_model must be a positive multiple of heads");
    if (d_model < 2) fail(ErrorKind::InvalidArgument, "d_model must be at least 2 for layer norm");
    if (encoder_blocks == 0) fail(ErrorKind::InvalidArgument, "need at least one encoder block");
    if (trunk_widths.empty()) fail(ErrorKind::InvalidArgument, "trunk_widths must not be empty");
    if (trunk_widths.size() != 5 && !allow_trunk_override)
      fail(ErrorKind::InvalidArgument, "trunk must have five layers unless allow_trunk_override is set");
    for (std::size_t w : trunk_widths)
      if (w == 0) fail(ErrorKind::InvalidArgument, "trunk widths must be positive");
  }

  nlohmann::json to_json() const {
    return {{"d_model", d_model},
            {"heads", heads},
            {"encoder_blocks", encoder_blocks},
            {"ffn_hidden", ffn_width()},
            {"trunk_widths", trunk_widths},
            {"allow_trunk_override", allow_trunk_override},
            {"layer_norm_eps", layer_norm_eps}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.heads = j.value("heads", c.heads);
    c.encoder_blocks = j.value("encoder_blocks", c.encoder_blocks);
    c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
    c.trunk_widths = j.value("trunk_widths", c.trunk_widths);
    c.allow_trunk_override = j.value("allow_trunk_override", c.allow_trunk_override);
    c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
    c.validate();
    return c;
  }
};

inline std::string embed_table_name(std::size_t f) { return "embed.f" + std::to_string(f) + ".table"; }
inline std::string embed_scale_name(std::size_t f) { return "embed.f" + std::to_string(f) + ".scale"; }
inline std::string embed_shift_name(std::size_t f) { return "embed.f" + std::to_string(f) + ".shift"; }
inline std::string block_prefix(std::size_t b) { return "block" + std::to_string(b) + "."; }
inline std::string head_name(std::size_t b, std::size_t h, const char* which) {
  return block_prefix(b) + "head" + std::to_string(h) + "." + which;
}
inline std::string trunk_name(std::size_t l, const char* which) {
  return "trunk" + std::to_string(l) + "." + which;
}

/// Random initial parameters: uniform +-sqrt(6/(fan_in+fan_out)) weights,
/// zero biases, unit layer-norm gains.
inline ParamStore init_params(const data::TabularSchema& schema, const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamStore p;
  const std::size_t d = cfg.d_model, dk = cfg.d_k(), ffn = cfg.ffn_width();
  for (std::size_t f = 0; f < schema.feature_count(); ++f) {
    const auto& spec = schema.feature(f);
    if (spec.categorical()) {
      p.add(embed_table_name(f), glorot_uniform(spec.categories.size(), d, rng));
    } else {
      p.add(embed_scale_name(f), glorot_uniform(1, d, rng));
      p.add(embed_shift_name(f), glorot_uniform(1, d, rng));
    }
  }
  for (std::size_t b = 0; b < cfg.encoder_blocks; ++b) {
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      p.add(head_name(b, h, "wq"), glorot_uniform(d, dk, rng));
      p.add(head_name(b, h, "wk"), glorot_uniform(d, dk, rng));
      p.add(head_name(b, h, "wv"), glorot_uniform(d, dk, rng));
    }
    const std::string pre = block_prefix(b);
    p.add(pre + "wo", glorot_uniform(cfg.heads * dk, d, rng));
    p.add(pre + "ln1.gain", Matrix(1, d, 1.0));
    p.add(pre + "ln1.bias", Matrix(1, d, 0.0));
    p.add(pre + "ffn.w1", glorot_uniform(d, ffn, rng));
    p.add(pre + "ffn.b1", Matrix(1, ffn, 0.0));
    p.add(pre + "ffn.w2", glorot_uniform(ffn, d, rng));
    p.add(pre + "ffn.b2", Matrix(1, d, 0.0));
    p.add(pre + "ln2.gain", Matrix(1, d, 1.0));
    p.add(pre + "ln2.bias", Matrix(1, d, 0.0));
  }
  std::size_t in = schema.feature_count() * d;
  for (std::size_t l = 0; l < cfg.trunk_widths.size(); ++l) {
    p.add(trunk_name(l, "w"), glorot_uniform(in, cfg.trunk_widths[l], rng));
    p.add(trunk_name(l, "b"), Matrix(1, cfg.trunk_widths[l], 0.0));
    in = cfg.trunk_widths[l];
  }
  p.add("classifier.w", glorot_uniform(in, 1, rng));
  p.add("classifier.b", Matrix(1, 1, 0.0));
  return p;
}

/// Tape handles for one stream's forward pass.
struct StreamVars {
  ad::Var tokens;    // (batch * token_count) x d_model, encoder output
  ad::Var features;  // batch x trunk_widths.back()
  ad::Var logits;    // batch x 1
  ad::Var probs;     // batch x 1
  // Per block, per head: (batch * token_count) x token_count, each row-stochastic.
  std::vector<std::vector<ad::Var>> attention;
};

/// The two-stream transformer classifier. Holds only structure; parameters
/// live in a ParamStore and are bound per call.
class Network {
 public:
  Network(data::TabularSchema schema, ModelConfig cfg) : schema_(std::move(schema)), cfg_(std::move(cfg)) {
    cfg_.validate();
  }

  const data::TabularSchema& schema() const noexcept { return schema_; }
  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t token_count() const noexcept { return schema_.feature_count(); }

  /// One token per raw feature: embedding-table row for categoricals, v * u_f + b_f for numerics.
  ad::Var embed(ad::Tape& tape, const BoundParams& p, const Matrix& encoded) const {
    if (encoded.cols() != schema_.encoded_width()) {
      fail(ErrorKind::SchemaMismatch, "encoded width " + std::to_string(encoded.cols()) + " vs schema " +
                                          std::to_string(schema_.encoded_width()));
    }
    const std::size_t batch = encoded.rows(), t = token_count(), d = cfg_.d_model;
    // Per (row, feature): category index, or the numeric value.
    std::vector<double> cell(batch * t);
    std::vector<ad::Var> inputs;
    std::vector<std::size_t> first_input(t);
    for (std::size_t f = 0; f < t; ++f) {
      const auto& spec = schema_.feature(f);
      const std::size_t off = schema_.offset(f);
      first_input[f] = inputs.size();
      if (spec.categorical()) {
        inputs.push_back(p[embed_table_name(f)]);
        for (std::size_t b = 0; b < batch; ++b) {
          auto row = encoded.row(b);
          std::size_t best = 0;
          for (std::size_t k = 1; k < spec.categories.size(); ++k)
            if (row[off + k] > row[off + best]) best = k;
          cell[b * t + f] = static_cast<double>(best);
        }
      } else {
        inputs.push_back(p[embed_scale_name(f)]);
        inputs.push_back(p[embed_shift_name(f)]);
        for (std::size_t b = 0; b < batch; ++b) cell[b * t + f] = encoded(b, off);
      }
    }
    std::vector<bool> is_cat(t);
    for (std::size_t f = 0; f < t; ++f) is_cat[f] = schema_.feature(f).categorical();

    Matrix out(batch * t, d);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t f = 0; f < t; ++f) {
        auto o = out.row(b * t + f);
        const double v = cell[b * t + f];
        if (is_cat[f]) {
          auto src = inputs[first_input[f]].value().row(static_cast<std::size_t>(v));
          std::copy(src.begin(), src.end(), o.begin());
        } else {
          const Matrix& u = inputs[first_input[f]].value();
          const Matrix& s = inputs[first_input[f] + 1].value();
          for (std::size_t c = 0; c < d; ++c) o[c] = v * u[c] + s[c];
        }
      }
    }
    return tape.record(
        std::move(out), inputs,
        [cell = std::move(cell), first_input = std::move(first_input), is_cat = std::move(is_cat), batch, t,
         d](const Matrix& g, const Matrix&, std::span<const Matrix* const>, std::span<Matrix* const> dg) {
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t f = 0; f < t; ++f) {
              auto gr = g.row(b * t + f);
              const double v = cell[b * t + f];
              if (is_cat[f]) {
                if (Matrix* table = dg[first_input[f]]) {
                  auto dst = table->row(static_cast<std::size_t>(v));
                  for (std::size_t c = 0; c < d; ++c) dst[c] += gr[c];
                }
              } else {
                if (Matrix* du = dg[first_input[f]])
                  for (std::size_t c = 0; c < d; ++c) (*du)[c] += v * gr[c];
                if (Matrix* ds = dg[first_input[f] + 1])
                  for (std::size_t c = 0; c < d; ++c) (*ds)[c] += gr[c];
              }
            }
          }
        });
  }

  struct AttentionResult {
    ad::Var combined;                  // concat(H_1..H_h) W^O
    std::vector<ad::Var> attention;    // A_j per head
  };

  /// A_j = softmax(Q_j K_j^T / sqrt(d_k)), H_j = A_j V_j, output concat(H) W^O; per instance.
  AttentionResult multi_head_attention(const BoundParams& p, ad::Var tokens, std::size_t block) const {
    const std::size_t t = token_count();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg_.d_k()));
    AttentionResult res;
    std::vector<ad::Var> heads;
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      ad::Var q = ad::matmul(tokens, p[head_name(block, h, "wq")]);
      ad::Var k = ad::matmul(tokens, p[head_name(block, h, "wk")]);
      ad::Var v = ad::matmul(tokens, p[head_name(block, h, "wv")]);
      ad::Var a = ad::softmax_rows(ad::scale(ad::block_matmul_nt(q, k, t), inv_sqrt_dk));
      res.attention.push_back(a);
      heads.push_back(ad::block_matmul(a, v, t));
    }
    res.combined = ad::matmul(ad::concat_cols(heads), p[block_prefix(block) + "wo"]);
    return res;
  }

  /// x1 = LN(x + MHA(x)); out = LN(x1 + FFN(x1)).
  ad::Var encoder_block(const BoundParams& p, ad::Var tokens, std::size_t block,
                        std::vector<ad::Var>* attention_out) const {
    const std::string pre = block_prefix(block);
    auto mha = multi_head_attention(p, tokens, block);
    if (attention_out) *attention_out = std::move(mha.attention);
    ad::Var x1 = ad::layer_norm_rows(ad::add(tokens, mha.combined), p[pre + "ln1.gain"], p[pre + "ln1.bias"],
                                     cfg_.layer_norm_eps);
    ad::Var hidden = ad::relu(ad::add_row(ad::matmul(x1, p[pre + "ffn.w1"]), p[pre + "ffn.b1"]));
    ad::Var ffn = ad::add_row(ad::matmul(hidden, p[pre + "ffn.w2"]), p[pre + "ffn.b2"]);
    return ad::layer_norm_rows(ad::add(x1, ffn), p[pre + "ln2.gain"], p[pre + "ln2.bias"], cfg_.layer_norm_eps);
  }

  /// Flattens tokens per instance and applies the affine+ReLU trunk layers.
  ad::Var trunk_forward(const BoundParams& p, ad::Var tokens) const {
    const std::size_t batch = tokens.value().rows() / token_count();
    ad::Var h = ad::reshape(tokens, batch, token_count() * cfg_.d_model);
    for (std::size_t l = 0; l < cfg_.trunk_widths.size(); ++l)
      h = ad::relu(ad::add_row(ad::matmul(h, p[trunk_name(l, "w")]), p[trunk_name(l, "b")]));
    return h;
  }

  StreamVars forward_stream(ad::Tape& tape, const BoundParams& p, const Matrix& encoded) const {
    if (encoded.rows() == 0) fail(ErrorKind::EmptyDataset, "forward on an empty batch");
    StreamVars out;
    ad::Var x = embed(tape, p, encoded);
    for (std::size_t b = 0; b < cfg_.encoder_blocks; ++b) {
      std::vector<ad::Var> att;
      x = encoder_block(p, x, b, &att);
      out.attention.push_back(std::move(att));
    }
    out.tokens = x;
    out.features = trunk_forward(p, x);
    out.logits = ad::add_row(ad::matmul(out.features, p["classifier.w"]), p["classifier.b"]);
    out.probs = ad::sigmoid(out.logits);
    return out;
  }

  /// Both streams with the same bound parameters. Training mode requires equal batch sizes.
  std::pair<StreamVars, StreamVars> forward_two_stream(ad::Tape& tape, const BoundParams& p, const Matrix& source,
                                                       const Matrix& target, bool training = true) const {
    if (training && source.rows() != target.rows()) {
      fail(ErrorKind::BatchSizeMismatch, "source batch " + std::to_string(source.rows()) + " vs target batch " +
                                             std::to_string(target.rows()));
    }
    auto s = forward_stream(tape, p, source);
    auto t = forward_stream(tape, p, target);
    return {std::move(s), std::move(t)};
  }

 private:
  data::TabularSchema schema_;
  ModelConfig cfg_;
};

/// Values of one stream's forward pass, detached from any tape.
struct ForwardOutput {
  std::vector<double> logits;
  std::vector<double> probs;
  Matrix features;
  std::vector<std::vector<Matrix>> attention;  // per block, per head
};

inline ForwardOutput detach(const StreamVars& s) {
  ForwardOutput o;
  o.logits = s.logits.value().values();
  o.probs = s.probs.value().values();
  o.features = s.features.value();
  for (const auto& block : s.attention) {
    std::vector<Matrix> heads;
    for (const auto& a : block) heads.push_back(a.value());
    o.attention.push_back(std::move(heads));
  }
  return o;
}

/// Inference without gradient recording.
inline ForwardOutput predict(const Network& net, const ParamStore& params, const Matrix& encoded) {
  ad::Tape tape;
  BoundParams p(tape, params, false);
  return detach(net.forward_stream(tape, p, encoded));
}

/// Probabilities only, evaluated in chunks to bound tape memory.
inline std::vector<double> predict_probs(const Network& net, const ParamStore& params, const Matrix& encoded,
                                         std::size_t chunk = 512) {
  std::vector<double> out;
  out.reserve(encoded.rows());
  for (std::size_t start = 0; start < encoded.rows(); start += chunk) {
    const std::size_t n = std::min(chunk, encoded.rows() - start);
    Matrix part(n, encoded.cols(),
                std::vector<double>(encoded.data() + start * encoded.cols(),
                                    encoded.data() + (start + n) * encoded.cols()));
    ad::Tape tape;
    BoundParams p(tape, params, false);
    auto s = net.forward_stream(tape, p, part);
    const auto& pr = s.probs.value().values();
    out.insert(out.end(), pr.begin(), pr.end());
  }
  return out;
}

}  // namespace tcnet::model
