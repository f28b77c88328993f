#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "accounting.hpp"
#include "analysis.hpp"
#include "synthdata.hpp"
#include "train.hpp"

namespace motlab {

using nlohmann::json;

constexpr int kConfigSchemaVersion = 1;

/// Everything one training run needs: the model, its data source, and the
/// optimizer/loop hyperparameters.
struct TrainConfig {
    ModelConfig model;
    SynthSpec data;
    TrainHparams train;
    bool operator==(const TrainConfig&) const = default;
};

json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const json& j);
json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const json& j);
json to_json(const TrainHparams& hp);
TrainHparams train_hparams_from_json(const json& j);
json to_json(const TrainConfig& cfg);
/// Fails closed: unknown keys anywhere in the document are rejected.
TrainConfig train_config_from_json(const json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

json to_json(const MixedSequence& seq);
MixedSequence sequence_from_json(const json& j);
MixedSequence load_sequence(const std::filesystem::path& path);
void save_sequence(const std::filesystem::path& path, const MixedSequence& seq);

json to_json(const CostReport& r);

/// One metrics.jsonl record.
json metrics_json(Split split, const CurvePoint& p, const ModelConfig& cfg);
/// Reads a metrics.jsonl file back into per-split curves.
LossCurve read_metrics_jsonl(const std::filesystem::path& path);

/// Append-only JSONL writer; every line lands in a single write() so the
/// file stays parseable line-by-line even after a crash.
class JsonlWriter {
public:
    explicit JsonlWriter(const std::filesystem::path& path);
    ~JsonlWriter();
    JsonlWriter(const JsonlWriter&) = delete;
    JsonlWriter& operator=(const JsonlWriter&) = delete;
    void append(const json& j);

private:
    int fd_ = -1;
    std::filesystem::path path_;
};

// --- checkpoints -----------------------------------------------------------

struct CheckpointInfo {
    TrainConfig config;
    std::int64_t step = 0;
    std::uint64_t model_seed = 0;
    std::uint64_t corpus_seed = 0;
};

/// Directory container: manifest.json + params.bin (raw little-endian
/// values concatenated in manifest order). The manifest records shapes,
/// dtypes, byte offsets and an FNV-1a hash of params.bin verified on load.
void save_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg,
                     const ParamStore& params, std::int64_t step);
std::pair<ModelState, CheckpointInfo> load_checkpoint(const std::filesystem::path& dir);

/// Exclusive run-directory lock (O_EXCL lock file holding the pid).
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path file_;
};

}  // namespace motlab
