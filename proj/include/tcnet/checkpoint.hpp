#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcnet/data/csv.hpp"
#include "tcnet/data/dataset.hpp"
#include "tcnet/model.hpp"

namespace tcnet {

/// Everything needed to score new rows: structure, schema, encoding and weights.
///
/// File layout: one line of JSON manifest terminated by '\n', followed by the
/// tensors as consecutive little-endian f64 values. Tensor byte offsets are
/// measured from the start of that payload.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  model::ModelConfig config;
  data::TabularSchema schema;
  data::EncodingStats stats;
  // Per categorical feature: category frequencies of the training rows (empty for numerics).
  std::vector<std::vector<double>> marginals;
  ParamStore params;
  nlohmann::json metadata = nlohmann::json::object();

  model::Network network() const { return model::Network(schema, config); }

  nlohmann::json manifest() const {
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& e : params.entries()) {
      const std::size_t len = e.value.size() * sizeof(double);
      tensors.push_back({{"name", e.name},
                         {"shape", {e.value.rows(), e.value.cols()}},
                         {"dtype", "f64"},
                         {"byte_offset", offset},
                         {"byte_len", len}});
      offset += len;
    }
    nlohmann::json st = nlohmann::json::array();
    for (const auto& s : stats) st.push_back({{"mean", s.mean}, {"std", s.std}});
    return {{"format_version", kFormatVersion},
            {"model_config", config.to_json()},
            {"schema_digest", schema.digest()},
            {"schema", schema.to_json()},
            {"encoding_stats", st},
            {"marginals", marginals},
            {"tensors", tensors},
            {"metadata", metadata}};
  }

  std::string serialize() const {
    std::string out = manifest().dump();
    out += '\n';
    for (const auto& e : params.entries()) {
      for (double v : e.value.values()) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        if constexpr (std::endian::native == std::endian::big) bits = byteswap64(bits);
        char buf[8];
        std::memcpy(buf, &bits, 8);
        out.append(buf, 8);
      }
    }
    return out;
  }

  static Checkpoint deserialize(std::string_view bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string_view::npos) fail(ErrorKind::Format, "checkpoint: manifest terminator missing");
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(bytes.substr(0, nl));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Format, std::string("checkpoint manifest: ") + e.what());
    }
    const std::string_view payload = bytes.substr(nl + 1);
    Checkpoint c;
    try {
      if (m.at("format_version").get<int>() != kFormatVersion)
        fail(ErrorKind::Format, "checkpoint: unsupported format_version");
      c.config = model::ModelConfig::from_json(m.at("model_config"));
      c.schema = data::TabularSchema::from_json(m.at("schema"));
      if (c.schema.digest() != m.at("schema_digest").get<std::string>())
        fail(ErrorKind::Format, "checkpoint: schema digest does not match embedded schema");
      for (const auto& s : m.at("encoding_stats")) c.stats.push_back({s.at("mean").get<double>(), s.at("std").get<double>()});
      c.marginals = m.at("marginals").get<std::vector<std::vector<double>>>();
      c.metadata = m.value("metadata", nlohmann::json::object());
      for (const auto& t : m.at("tensors")) {
        if (t.at("dtype").get<std::string>() != "f64") fail(ErrorKind::Format, "checkpoint: only f64 tensors");
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        const auto off = t.at("byte_offset").get<std::size_t>();
        const auto len = t.at("byte_len").get<std::size_t>();
        if (shape.size() != 2 || len != shape[0] * shape[1] * sizeof(double) || off + len > payload.size())
          fail(ErrorKind::Format, "checkpoint: tensor " + t.at("name").get<std::string>() + " out of bounds");
        Matrix v(shape[0], shape[1]);
        for (std::size_t i = 0; i < v.size(); ++i) {
          std::uint64_t bits = 0;
          std::memcpy(&bits, payload.data() + off + i * 8, 8);
          if constexpr (std::endian::native == std::endian::big) bits = byteswap64(bits);
          v[i] = std::bit_cast<double>(bits);
        }
        c.params.add(t.at("name").get<std::string>(), std::move(v));
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Format, std::string("checkpoint manifest: ") + e.what());
    }
    return c;
  }

  void save(const std::string& path) const { data::write_file(path, serialize()); }
  static Checkpoint load(const std::string& path) { return deserialize(data::read_file(path)); }

 private:
  static std::uint64_t byteswap64(std::uint64_t v) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
    return r;
  }
};

/// Category frequencies of each categorical feature (training marginals).
inline std::vector<std::vector<double>> categorical_marginals(const data::DomainDataset& d) {
  const auto& s = d.schema();
  std::vector<std::vector<double>> out(s.feature_count());
  for (std::size_t f = 0; f < s.feature_count(); ++f) {
    if (!s.feature(f).categorical()) continue;
    out[f].assign(s.feature(f).categories.size(), 0.0);
    for (std::size_t r = 0; r < d.size(); ++r) out[f][d.category(r, f)] += 1.0;
    for (double& v : out[f]) v /= static_cast<double>(std::max<std::size_t>(d.size(), 1));
  }
  return out;
}

}  // namespace tcnet
