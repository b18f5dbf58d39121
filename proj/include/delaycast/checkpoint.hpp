#ifndef DELAYCAST_CHECKPOINT_HPP
#define DELAYCAST_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <unordered_map>

#include "json.hpp"

#include "delaycast/conformal.hpp"
#include "delaycast/data.hpp"
#include "delaycast/errors.hpp"
#include "delaycast/model.hpp"
#include "delaycast/optim.hpp"

namespace delaycast {

// Versioned binary artifact container: a JSON metadata document plus named
// float64 blobs. Checkpoints and calibration sidecars share this codec.
//
//   magic "DCAF" | u32 version | u64 meta_len | meta (UTF-8 JSON)
//   | u64 n_blobs | { u64 name_len | name | u64 rows | u64 cols | f64... }*
//
// Integers and doubles are little-endian host layout.
struct ArtifactFile {
  static constexpr std::uint32_t kVersion = 1;
  nlohmann::json meta;
  std::vector<std::pair<std::string, std::vector<double>>> blobs;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> blob_shapes;

  void add_blob(std::string name, const std::vector<double>& data,
                std::uint64_t rows, std::uint64_t cols) {
    blobs.emplace_back(std::move(name), data);
    blob_shapes.emplace_back(rows, cols);
  }
};

namespace detail {

constexpr char kArtifactMagic[4] = {'D', 'C', 'A', 'F'};

template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw RuntimeFailure("artifact file truncated");
  return v;
}

}  // namespace detail

// Atomic: writes to a temp sibling, then renames over the target.
inline void write_artifact(const std::filesystem::path& path,
                           const ArtifactFile& artifact) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot write artifact: " + path.string());
    out.write(detail::kArtifactMagic, 4);
    detail::write_raw(out, ArtifactFile::kVersion);
    const std::string meta = artifact.meta.dump();
    detail::write_raw(out, static_cast<std::uint64_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    detail::write_raw(out, static_cast<std::uint64_t>(artifact.blobs.size()));
    for (std::size_t i = 0; i < artifact.blobs.size(); ++i) {
      const auto& [name, data] = artifact.blobs[i];
      const auto& [rows, cols] = artifact.blob_shapes[i];
      detail::write_raw(out, static_cast<std::uint64_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::write_raw(out, rows);
      detail::write_raw(out, cols);
      out.write(reinterpret_cast<const char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
    }
    if (!out) throw RuntimeFailure("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline ArtifactFile read_artifact(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw MissingArtifactError("artifact not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open artifact: " + path.string());

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kArtifactMagic, 4) != 0)
    throw RuntimeFailure("not a delaycast artifact: " + path.string());
  const auto version = detail::read_raw<std::uint32_t>(in);
  if (version != ArtifactFile::kVersion)
    throw RuntimeFailure("unsupported artifact version " +
                         std::to_string(version) + " in " + path.string());

  ArtifactFile artifact;
  const auto meta_len = detail::read_raw<std::uint64_t>(in);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw RuntimeFailure("artifact file truncated: " + path.string());
  artifact.meta = nlohmann::json::parse(meta);

  const auto n_blobs = detail::read_raw<std::uint64_t>(in);
  for (std::uint64_t b = 0; b < n_blobs; ++b) {
    const auto name_len = detail::read_raw<std::uint64_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto rows = detail::read_raw<std::uint64_t>(in);
    const auto cols = detail::read_raw<std::uint64_t>(in);
    std::vector<double> data(rows * cols);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw RuntimeFailure("artifact file truncated: " + path.string());
    artifact.add_blob(std::move(name), data, rows, cols);
  }
  return artifact;
}

// ---------------------------------------------------------------------------
// Schema <-> JSON
// ---------------------------------------------------------------------------

inline nlohmann::json schema_to_json(const FeatureSchema& schema) {
  nlohmann::json doc;
  doc["categorical"] = nlohmann::json::array();
  for (const auto& spec : schema.categorical_specs)
    doc["categorical"].push_back({{"name", spec.name}, {"tokens", spec.tokens}});
  doc["numerical"] = nlohmann::json::array();
  for (const auto& spec : schema.numerical_specs)
    doc["numerical"].push_back(
        {{"name", spec.name}, {"mean", spec.mean}, {"stddev", spec.stddev}});
  return doc;
}

inline FeatureSchema schema_from_json(const nlohmann::json& doc) {
  FeatureSchema schema;
  for (const auto& c : doc.at("categorical")) {
    CategoricalSpec spec;
    spec.name = c.at("name").get<std::string>();
    spec.tokens = c.at("tokens").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < spec.tokens.size(); ++i)
      spec.vocab.emplace(spec.tokens[i], static_cast<int>(i) + 1);
    spec.cardinality = static_cast<int>(spec.tokens.size()) + 1;
    schema.categorical_specs.push_back(std::move(spec));
  }
  for (const auto& n : doc.at("numerical")) {
    NumericalSpec spec;
    spec.name = n.at("name").get<std::string>();
    spec.mean = n.at("mean").get<double>();
    spec.stddev = n.at("stddev").get<double>();
    schema.numerical_specs.push_back(std::move(spec));
  }
  return schema;
}

inline nlohmann::json architecture_to_json(const ArchitectureConfig& arch) {
  return {{"n_blocks", arch.n_blocks},
          {"d_hidden", arch.d_hidden},
          {"dropout", arch.dropout},
          {"d_cat_max", arch.d_cat_max},
          {"plr_frequencies", arch.plr_frequencies},
          {"d_num", arch.d_num},
          {"head_hidden", arch.head_hidden},
          {"plr_sigma", arch.plr_sigma}};
}

inline ArchitectureConfig architecture_from_json(const nlohmann::json& doc) {
  ArchitectureConfig arch;
  arch.n_blocks = doc.at("n_blocks").get<int>();
  arch.d_hidden = doc.at("d_hidden").get<int>();
  arch.dropout = doc.at("dropout").get<double>();
  arch.d_cat_max = doc.at("d_cat_max").get<int>();
  arch.plr_frequencies = doc.at("plr_frequencies").get<int>();
  arch.d_num = doc.at("d_num").get<int>();
  arch.head_hidden = doc.at("head_hidden").get<int>();
  arch.plr_sigma = doc.at("plr_sigma").get<double>();
  return arch;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

struct Checkpoint {
  FeatureSchema schema;
  ArchitectureConfig arch;
  Model model;
  nlohmann::json optimizer_meta;
  std::string rng_state;
  nlohmann::json config_echo;
};

inline void save_checkpoint(const std::filesystem::path& path,
                            const Model& model, const FeatureSchema& schema,
                            const OptimizerState& opt,
                            const std::string& rng_state,
                            const nlohmann::json& config_echo) {
  ArtifactFile artifact;
  artifact.meta["format"] = "delaycast-checkpoint";
  artifact.meta["schema"] = schema_to_json(schema);
  artifact.meta["schema_hash"] = schema.hash();
  artifact.meta["architecture"] = architecture_to_json(model.arch);
  artifact.meta["optimizer"] = {
      {"step", opt.step},
      {"base_lr", opt.schedule.base_lr},
      {"warmup_steps", opt.schedule.warmup_steps},
      {"total_steps", opt.schedule.total_steps},
      {"weight_decay", opt.weight_decay},
      {"clip_norm", opt.clip_norm ? nlohmann::json(*opt.clip_norm)
                                  : nlohmann::json(nullptr)}};
  artifact.meta["rng_state"] = rng_state;
  artifact.meta["config_echo"] = config_echo;

  nlohmann::json params = nlohmann::json::array();
  const auto named = model.named_params();
  for (const auto& p : named) {
    params.push_back({{"name", p.name},
                      {"rows", p.tensor->rows},
                      {"cols", p.tensor->cols},
                      {"regression_head", p.regression_head}});
    artifact.add_blob("param." + p.name, p.tensor->data, p.tensor->rows,
                      p.tensor->cols);
  }
  artifact.meta["params"] = std::move(params);
  for (std::size_t i = 0; i < named.size(); ++i) {
    artifact.add_blob("adam.m." + named[i].name, opt.m[i],
                      named[i].tensor->rows, named[i].tensor->cols);
    artifact.add_blob("adam.v." + named[i].name, opt.v[i],
                      named[i].tensor->rows, named[i].tensor->cols);
  }
  write_artifact(path, artifact);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  Rng&& scratch_rng = Rng(0)) {
  const auto artifact = read_artifact(path);
  if (artifact.meta.value("format", "") != "delaycast-checkpoint")
    throw RuntimeFailure("artifact is not a checkpoint: " + path.string());

  Checkpoint ckpt;
  ckpt.schema = schema_from_json(artifact.meta.at("schema"));
  ckpt.arch = architecture_from_json(artifact.meta.at("architecture"));
  ckpt.optimizer_meta = artifact.meta.at("optimizer");
  ckpt.rng_state = artifact.meta.value("rng_state", "");
  ckpt.config_echo = artifact.meta.value("config_echo", nlohmann::json());

  ckpt.model = build_model(ckpt.arch, ckpt.schema, scratch_rng);

  std::unordered_map<std::string, std::size_t> blob_index;
  for (std::size_t i = 0; i < artifact.blobs.size(); ++i)
    blob_index.emplace(artifact.blobs[i].first, i);

  for (const auto& p : ckpt.model.named_params()) {
    const auto it = blob_index.find("param." + p.name);
    if (it == blob_index.end())
      throw RuntimeFailure("checkpoint missing parameter '" + p.name + "'");
    const auto& [rows, cols] = artifact.blob_shapes[it->second];
    if (rows != p.tensor->rows || cols != p.tensor->cols)
      throw RuntimeFailure("checkpoint parameter '" + p.name +
                           "' has unexpected shape");
    p.tensor->data = artifact.blobs[it->second].second;
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Calibration sidecar (same container, zero blobs)
// ---------------------------------------------------------------------------

inline void save_calibration(const std::filesystem::path& path,
                             const CalibrationResult& calib,
                             std::uint64_t schema_hash,
                             const nlohmann::json& config_echo) {
  ArtifactFile artifact;
  artifact.meta["format"] = "delaycast-calibration";
  artifact.meta["alpha"] = calib.alpha;
  artifact.meta["q_hat_delayed"] = calib.q_hat_delayed;
  artifact.meta["q_hat_ontime"] = calib.q_hat_ontime;
  artifact.meta["n_delayed"] = calib.n_delayed;
  artifact.meta["n_ontime"] = calib.n_ontime;
  artifact.meta["schema_hash"] = schema_hash;
  artifact.meta["config_echo"] = config_echo;
  write_artifact(path, artifact);
}

inline std::pair<CalibrationResult, std::uint64_t> load_calibration(
    const std::filesystem::path& path) {
  const auto artifact = read_artifact(path);
  if (artifact.meta.value("format", "") != "delaycast-calibration")
    throw RuntimeFailure("artifact is not a calibration file: " + path.string());
  CalibrationResult calib;
  calib.alpha = artifact.meta.at("alpha").get<double>();
  calib.q_hat_delayed = artifact.meta.at("q_hat_delayed").get<double>();
  calib.q_hat_ontime = artifact.meta.at("q_hat_ontime").get<double>();
  calib.n_delayed = artifact.meta.at("n_delayed").get<std::size_t>();
  calib.n_ontime = artifact.meta.at("n_ontime").get<std::size_t>();
  return {calib, artifact.meta.at("schema_hash").get<std::uint64_t>()};
}

}  // namespace delaycast

#endif  // DELAYCAST_CHECKPOINT_HPP
